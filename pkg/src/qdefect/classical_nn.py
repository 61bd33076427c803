"""Differentiable classical layers written directly in numpy.

Feature maps are float64 arrays shaped ``(N, C, H, W)``; the functional helpers
also accept a single ``(C, H, W)`` map. Every layer keeps what it needs from
``forward`` and returns the input gradient from ``backward``, filling
``layer.grads`` with one entry per array in ``layer.params``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LN_EPS = 1e-5
LOG_CLAMP = 1e-12


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected a (C, H, W) or (N, C, H, W) array, got shape {x.shape}")
    return x, False


class Layer:
    """Base class: ``params``/``grads`` dicts and the forward/backward protocol."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def named_layers(self, prefix=""):
        yield prefix, self

    def kink_margin(self) -> float:
        """Smallest |input| seen by any ReLU below this layer in the last forward pass."""
        return min((getattr(layer, "margin", np.inf) for _, layer in self.named_layers()), default=np.inf)

    def parameters(self, prefix=""):
        """Flat ``{dotted.name: array}`` view of every trainable array below this layer."""
        out = {}
        for name, layer in self.named_layers(prefix):
            for key, value in layer.params.items():
                out[f"{name}.{key}" if name else key] = value
        return out

    def gradients(self, prefix=""):
        out = {}
        for name, layer in self.named_layers(prefix):
            for key in layer.params:
                full = f"{name}.{key}" if name else key
                out[full] = layer.grads.get(key, np.zeros_like(layer.params[key]))
        return out


class Container(Layer):
    children: tuple[str, ...] = ()

    def named_layers(self, prefix=""):
        yield prefix, self
        for child in self.children:
            sub = f"{prefix}.{child}" if prefix else child
            yield from getattr(self, child).named_layers(sub)


# --- convolution ------------------------------------------------------------


@dataclass
class ConvKernel:
    weights: np.ndarray  # (out_channels, in_channels, k, k)
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ValueError("kernel weights must be (out, in, k, k)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("kernel weights must be finite")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float).reshape(self.weights.shape[0])


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _conv_forward(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, ci, k, _ = w.shape
    if ci != c:
        raise ValueError(f"kernel expects {ci} input channels, got {c}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > h + 2 * padding or k > wd + 2 * padding:
        raise ValueError("kernel larger than the padded input")
    xp = _pad(x, padding)
    win = _windows(xp, k, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return out, xp


def conv2d(x, kernel: ConvKernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation (no kernel flip)."""
    xb, single = _batched(x)
    out, _ = _conv_forward(xb, kernel.weights, kernel.bias, stride, padding)
    return out[0] if single else out


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, k, stride=1, padding=0, bias=True, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        self.params["w"] = _he_uniform(rng, (out_channels, in_channels, k, k), in_channels * k * k)
        if bias:
            self.params["b"] = np.zeros(out_channels)

    @property
    def kernel(self) -> ConvKernel:
        return ConvKernel(self.params["w"], self.params.get("b"))

    def forward(self, x):
        out, xp = _conv_forward(x, self.params["w"], self.params.get("b"), self.stride, self.padding)
        self._cache = (x.shape, xp)
        return out

    def backward(self, dy):
        x_shape, xp = self._need_cache()
        w = self.params["w"]
        k = w.shape[2]
        s = self.stride
        win = _windows(xp, k, s)
        self.grads["w"] = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
        if "b" in self.params:
            self.grads["b"] = dy.sum(axis=(0, 2, 3))
        dxp = np.zeros_like(xp)
        ho, wo = dy.shape[2], dy.shape[3]
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.tensordot(
                    dy, w[:, :, i, j], axes=([1], [0])
                ).transpose(0, 3, 1, 2)
        p = self.padding
        h, wd = x_shape[2], x_shape[3]
        return dxp[:, :, p : p + h, p : p + wd]

    def macs(self, h: int, w: int) -> int:
        o, c, k, _ = self.params["w"].shape
        ho = output_size(h, k, self.stride, self.padding)
        wo = output_size(w, k, self.stride, self.padding)
        return o * c * k * k * ho * wo


def _depthwise_forward(x, w, padding):
    n, c, h, wd = x.shape
    if w.shape[0] != c:
        raise ValueError(f"{w.shape[0]} depthwise kernels for {c} channels")
    k = w.shape[1]
    if k > h + 2 * padding or k > wd + 2 * padding:
        raise ValueError("kernel larger than the padded input")
    xp = _pad(x, padding)
    ho, wo = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    out = np.zeros((n, c, ho, wo))
    for i in range(k):
        for j in range(k):
            out += w[None, :, i, j, None, None] * xp[:, :, i : i + ho, j : j + wo]
    return out, xp


def depthwise_conv(x, kernels, padding: int = None) -> np.ndarray:
    """Per-channel convolution; ``kernels`` is ``(C, k, k)``. Default padding keeps the size."""
    xb, single = _batched(x)
    kernels = np.asarray(kernels, dtype=float)
    padding = kernels.shape[-1] // 2 if padding is None else padding
    out, _ = _depthwise_forward(xb, kernels, padding)
    return out[0] if single else out


def identity_plus_noise(rng, channels: int, k: int, scale: float = 0.1) -> np.ndarray:
    w = scale * rng.standard_normal((channels, k, k))
    w[:, k // 2, k // 2] += 1.0
    return w


class DepthwiseConv2d(Layer):
    def __init__(self, channels, k=3, padding=None, rng=None, init="he"):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.padding = k // 2 if padding is None else padding
        if init == "identity":
            self.params["w"] = identity_plus_noise(rng, channels, k)
        else:
            self.params["w"] = _he_uniform(rng, (channels, k, k), k * k)

    def forward(self, x):
        out, xp = _depthwise_forward(x, self.params["w"], self.padding)
        self._cache = (x.shape, xp)
        return out

    def backward(self, dy):
        x_shape, xp = self._need_cache()
        w = self.params["w"]
        k = w.shape[1]
        ho, wo = dy.shape[2], dy.shape[3]
        gw = np.empty_like(w)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                patch = xp[:, :, i : i + ho, j : j + wo]
                gw[:, i, j] = np.einsum("nchw,nchw->c", dy, patch)
                dxp[:, :, i : i + ho, j : j + wo] += w[None, :, i, j, None, None] * dy
        self.grads["w"] = gw
        p = self.padding
        return dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]]

    def macs(self, h: int, w: int) -> int:
        c, k, _ = self.params["w"].shape
        return c * k * k * (h + 2 * self.padding - k + 1) * (w + 2 * self.padding - k + 1)


# --- self-proliferation ------------------------------------------------------


@dataclass(frozen=True)
class SelfProliferationConfig:
    s: int
    t: int = 2
    cheap_k: int = 3

    def __post_init__(self):
        if self.s < 1 or self.t < 1:
            raise ValueError("self-proliferation needs s >= 1 and t >= 1")
        if self.cheap_k < 1 or self.cheap_k % 2 == 0:
            raise ValueError("cheap kernel size must be odd and positive")

    @property
    def out_channels(self) -> int:
        return self.s * self.t


def self_proliferate(x, primary: ConvKernel, cfg: SelfProliferationConfig, cheap=None) -> np.ndarray:
    """Primary maps from ``primary`` plus ``t - 1`` cheap depthwise maps per primary map.

    ``cheap`` holds the ``s * (t - 1)`` depthwise kernels, ordered map-major
    (the kernels of primary map 0 first).
    """
    if primary.weights.shape[0] != cfg.s:
        raise ValueError(f"primary kernel has {primary.weights.shape[0]} maps, config says s={cfg.s}")
    xb, single = _batched(x)
    k = primary.weights.shape[2]
    prim, _ = _conv_forward(xb, primary.weights, primary.bias, 1, k // 2)
    if cfg.t > 1:
        cheap = np.asarray(cheap, dtype=float)
        if cheap.shape != (cfg.s * (cfg.t - 1), cfg.cheap_k, cfg.cheap_k):
            raise ValueError("cheap kernels do not match the self-proliferation config")
        extra, _ = _depthwise_forward(np.repeat(prim, cfg.t - 1, axis=1), cheap, cfg.cheap_k // 2)
        prim = np.concatenate([prim, extra], axis=1)
    return prim[0] if single else prim


class SelfProliferation(Container):
    children = ("primary", "cheap")

    def __init__(self, in_channels, cfg: SelfProliferationConfig, k=3, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.primary = Conv2d(in_channels, cfg.s, k, padding=k // 2, bias=False, rng=rng)
        self.cheap = (
            DepthwiseConv2d(cfg.s * (cfg.t - 1), cfg.cheap_k, rng=rng, init="identity")
            if cfg.t > 1
            else None
        )
        if self.cheap is None:
            self.children = ("primary",)

    def forward(self, x):
        prim = self.primary.forward(x)
        if self.cheap is None:
            return prim
        extra = self.cheap.forward(np.repeat(prim, self.cfg.t - 1, axis=1))
        return np.concatenate([prim, extra], axis=1)

    def backward(self, dy):
        s, t = self.cfg.s, self.cfg.t
        d_prim = dy[:, :s].copy()
        if self.cheap is not None:
            d_rep = self.cheap.backward(dy[:, s:])
            n, _, h, w = d_rep.shape
            d_prim += d_rep.reshape(n, s, t - 1, h, w).sum(axis=2)
        return self.primary.backward(d_prim)

    def macs(self, h: int, w: int) -> int:
        total = self.primary.macs(h, w)
        if self.cheap is not None:
            total += self.cheap.macs(h, w)
        return total


# --- elementwise / normalization ---------------------------------------------


def relu(x):
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def tanh(x):
    return np.tanh(np.asarray(x, dtype=float))


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ValueError("softmax of an empty array")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x, gamma=None, beta=None, eps: float = LN_EPS):
    """Normalize over the last axis, then scale and shift."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("layer_norm of an empty array")
    mu = x.mean(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    if gamma is not None:
        xhat = xhat * gamma
    if beta is not None:
        xhat = xhat + beta
    return xhat


def fc(x, w, b=None):
    out = np.asarray(x, dtype=float) @ np.asarray(w, dtype=float).T
    return out if b is None else out + b


def cross_entropy(probs, labels) -> float:
    """Mean negative log-likelihood of the true class; probabilities clamped at 1e-12."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if probs.shape[0] == 0:
        raise ValueError("cross_entropy of an empty batch")
    if labels.shape[0] != probs.shape[0]:
        raise ValueError("one label per row required")
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise ValueError("label out of range")
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def _kink_margin(x: np.ndarray) -> float:
    """Smallest nonzero |x|. Exact zeros come from all-zero windows feeding
    bias-free convolutions and stay zero under small perturbations."""
    a = np.abs(x[x != 0])
    return float(a.min()) if a.size else np.inf


class ReLU(Layer):
    def forward(self, x):
        self.margin = _kink_margin(x)
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return dy * self._need_cache()


class Tanh(Layer):
    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, dy):
        return dy * (1.0 - self._need_cache() ** 2)


class LayerNorm(Layer):
    def __init__(self, width, eps=LN_EPS):
        super().__init__()
        self.eps = eps
        self.params["gamma"] = np.ones(width)
        self.params["beta"] = np.zeros(width)

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, dy):
        xhat, inv = self._need_cache()
        lead = tuple(range(dy.ndim - 1))
        self.grads["gamma"] = (dy * xhat).sum(axis=lead)
        self.grads["beta"] = dy.sum(axis=lead)
        g = dy * self.params["gamma"]
        return inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, bias=True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["w"] = _he_uniform(rng, (out_features, in_features), in_features)
        if bias:
            self.params["b"] = np.zeros(out_features)

    def forward(self, x):
        self._cache = x
        return fc(x, self.params["w"], self.params.get("b"))

    def backward(self, dy):
        x = self._need_cache()
        self.grads["w"] = dy.T @ x
        if "b" in self.params:
            self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["w"]


class GlobalAvgPool(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._need_cache()
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).copy()


# --- self-attention ------------------------------------------------------------


@dataclass
class AttentionParams:
    w_g: np.ndarray  # (C,)  scalar attention logit per position
    w_e1: np.ndarray  # (Cr, C)
    w_e2: np.ndarray  # (C, Cr)
    ln_gamma: np.ndarray  # (Cr,)
    ln_beta: np.ndarray  # (Cr,)

    def __post_init__(self):
        c = np.shape(self.w_g)[0]
        cr = np.shape(self.w_e1)[0]
        if np.shape(self.w_e1) != (cr, c) or np.shape(self.w_e2) != (c, cr):
            raise ValueError("bottleneck transforms do not match the channel count")
        if not cr < c:
            raise ValueError("bottleneck width must be smaller than the channel count")

    @classmethod
    def init(cls, channels: int, ratio: float = 0.5, rng=None) -> "AttentionParams":
        rng = rng or np.random.default_rng(0)
        cr = max(1, int(channels * ratio))
        if cr >= channels:
            cr = channels - 1
        if cr < 1:
            raise ValueError("self-attention needs at least 2 channels")
        return cls(
            w_g=_he_uniform(rng, (channels,), channels),
            w_e1=_he_uniform(rng, (cr, channels), channels),
            w_e2=np.zeros((channels, cr)),
            ln_gamma=np.ones(cr),
            ln_beta=np.zeros(cr),
        )


def self_attention(x, p: AttentionParams) -> np.ndarray:
    """Global-context attention: softmax pooling, bottleneck transform, broadcast add."""
    xb, single = _batched(x)
    n, c, h, w = xb.shape
    if c != np.shape(p.w_g)[0]:
        raise ValueError(f"attention parameters expect {np.shape(p.w_g)[0]} channels, got {c}")
    flat = xb.reshape(n, c, h * w)
    weights = softmax(np.einsum("c,ncp->np", p.w_g, flat), axis=1)
    context = np.einsum("np,ncp->nc", weights, flat)
    t = relu(layer_norm(context @ p.w_e1.T, p.ln_gamma, p.ln_beta))
    out = xb + (t @ p.w_e2.T)[:, :, None, None]
    return out[0] if single else out


class SelfAttention(Container):
    children = ("ln",)

    def __init__(self, channels, ratio=0.5, rng=None):
        super().__init__()
        ap = AttentionParams.init(channels, ratio, rng)
        self.params["w_g"] = ap.w_g
        self.params["w_e1"] = ap.w_e1
        self.params["w_e2"] = ap.w_e2
        self.ln = LayerNorm(ap.w_e1.shape[0])
        self.ln.params["gamma"] = ap.ln_gamma
        self.ln.params["beta"] = ap.ln_beta

    @property
    def attention_params(self) -> AttentionParams:
        return AttentionParams(
            self.params["w_g"], self.params["w_e1"], self.params["w_e2"],
            self.ln.params["gamma"], self.ln.params["beta"],
        )

    def forward(self, x):
        n, c, h, w = x.shape
        flat = x.reshape(n, c, h * w)
        a = softmax(np.einsum("c,ncp->np", self.params["w_g"], flat), axis=1)
        ctx = np.einsum("np,ncp->nc", a, flat)
        t = ctx @ self.params["w_e1"].T
        l = self.ln.forward(t)
        r = np.maximum(l, 0.0)
        self.margin = _kink_margin(l)
        d = r @ self.params["w_e2"].T
        self._cache = (x.shape, flat, a, ctx, l, r)
        return x + d[:, :, None, None]

    def backward(self, dy):
        shape, flat, a, ctx, l, r = self._need_cache()
        dd = dy.sum(axis=(2, 3))
        self.grads["w_e2"] = dd.T @ r
        dl = (dd @ self.params["w_e2"]) * (l > 0)
        dt = self.ln.backward(dl)
        self.grads["w_e1"] = dt.T @ ctx
        dctx = dt @ self.params["w_e1"]
        dflat = dctx[:, :, None] * a[:, None, :]
        da = np.einsum("nc,ncp->np", dctx, flat)
        dlogit = a * (da - (a * da).sum(axis=1, keepdims=True))
        self.grads["w_g"] = np.einsum("np,ncp->c", dlogit, flat)
        dflat += self.params["w_g"][None, :, None] * dlogit[:, None, :]
        return dy + dflat.reshape(shape)


# --- SP&A block --------------------------------------------------------------------


class SPABlock(Container):
    """Expansion by self-proliferation, depthwise conv + self-attention,
    1x1 compression back to the input width, inverted residual."""

    children = ("expand", "expand_act", "depthwise", "dw_act", "attention", "compress")

    def __init__(self, channels, cfg: SelfProliferationConfig, primary_k=3, dw_k=3, ratio=0.5, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        wide = cfg.out_channels
        self.channels = channels
        self.expand = SelfProliferation(channels, cfg, k=primary_k, rng=rng)
        self.expand_act = ReLU()
        self.depthwise = DepthwiseConv2d(wide, dw_k, rng=rng)
        self.dw_act = ReLU()
        self.attention = SelfAttention(wide, ratio, rng=rng)
        self.compress = Conv2d(wide, channels, 1, rng=rng)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"SP&A block expects {self.channels} channels, got {x.shape[1]}")
        y = self.expand_act.forward(self.expand.forward(x))
        y = self.attention.forward(self.dw_act.forward(self.depthwise.forward(y)))
        return x + self.compress.forward(y)

    def backward(self, dy):
        d = self.compress.backward(dy)
        d = self.depthwise.backward(self.dw_act.backward(self.attention.backward(d)))
        d = self.expand.backward(self.expand_act.backward(d))
        return dy + d


def spa_block(x, block: SPABlock) -> np.ndarray:
    xb, single = _batched(x)
    out = block.forward(xb)
    return out[0] if single else out


class Sequential(Container):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        self.children = tuple(str(i) for i in range(len(layers)))
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy
