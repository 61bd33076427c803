"""Hybrid classical-quantum classifier and its training loop.

Pipeline: stem conv -> SP&A block(s) -> global average pool -> FC to
``n_qubits`` -> tanh -> angle encoding -> parametrized circuit -> <Z> per
qubit -> FC head -> softmax. With ``quantum=False`` the head reads the tanh
features directly, which gives the classical baseline with the same I/O.

Parameters are exposed as one flat ``{name: array}`` dict. Names start with
``classical.``, ``quantum.`` or ``head.``; ``param_groups`` further splits the
classical and head entries into weights and biases.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import classical_nn as nn
from . import qstate
from .circuits import KINDS, build_template, run_batch
from .data import AUGMENTATIONS, WaferDataset, WaferSample, atomic_write, augment
from .encoders import EncodingSpec, encode_batch
from .gradients import quantum_jacobian

OPTIMIZERS = ("sgd", "momentum", "adam")
THETA_INIT_SCALE = 0.1


@dataclass(frozen=True)
class ModelConfig:
    height: int = 26
    width: int = 26
    n_classes: int = 4
    stem_channels: int = 8
    spa_s: int = 4
    spa_t: int = 2
    n_blocks: int = 1
    n_qubits: int = 4
    template: str = "c5"
    n_layers: int = 4
    encoding: str = "angle"
    axis: str = "X"
    quantum: bool = True
    attention_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("height", "width"):
            if getattr(self, name) < 3:
                raise ValueError(f"{name} must be >= 3")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.stem_channels < 2:
            raise ValueError("stem_channels must be >= 2")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        nn.SelfProliferationConfig(self.spa_s, self.spa_t)
        if self.template.lower() not in KINDS:
            raise ValueError(f"unknown template {self.template!r}")
        if not 2 <= self.n_qubits <= 10:
            raise ValueError("n_qubits must lie in 2..10")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        EncodingSpec(self.encoding, self.n_qubits, self.axis)
        if not 0 < self.attention_ratio < 1:
            raise ValueError("attention_ratio must lie in (0, 1)")


class HybridModel:
    def __init__(self, config: ModelConfig | None = None):
        self.config = cfg = config or ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        spa = nn.SelfProliferationConfig(cfg.spa_s, cfg.spa_t)
        layers = [nn.Conv2d(1, cfg.stem_channels, 3, padding=1, rng=rng), nn.ReLU()]
        for _ in range(cfg.n_blocks):
            layers.append(nn.SPABlock(cfg.stem_channels, spa, ratio=cfg.attention_ratio, rng=rng))
        layers += [nn.GlobalAvgPool(), nn.Linear(cfg.stem_channels, cfg.n_qubits, rng=rng)]
        self.classical = nn.Sequential(*layers)
        self.template = build_template(cfg.template, cfg.n_qubits, cfg.n_layers)
        self.encoding = EncodingSpec(cfg.encoding, cfg.n_qubits, cfg.axis)
        # near-identity start keeps the encoded features visible to the head
        self.theta = rng.uniform(-THETA_INIT_SCALE, THETA_INIT_SCALE, self.template.param_count)
        self.head = nn.Linear(cfg.n_qubits, cfg.n_classes, rng=rng)
        self._grads: dict[str, np.ndarray] = {}

    # --- parameters ---------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references; in-place edits change the model."""
        out = self.classical.parameters("classical")
        if self.config.quantum:
            out["quantum.theta"] = self.theta
        out.update(self.head.parameters("head"))
        return out

    def param_groups(self) -> dict[str, list[str]]:
        """Weights/biases of the classical stage, circuit angles, head weights/biases."""
        groups = {"classical_w": [], "classical_b": [], "theta": [], "head_w": [], "head_b": []}
        for name in self.parameters():
            if name == "quantum.theta":
                groups["theta"].append(name)
                continue
            prefix = "head" if name.startswith("head.") else "classical"
            groups[f"{prefix}_{'b' if name.endswith('.b') else 'w'}"].append(name)
        return groups

    def param_counts(self) -> dict[str, int]:
        params = self.parameters()
        classical = sum(v.size for k, v in params.items() if k.startswith("classical."))
        head = sum(v.size for k, v in params.items() if k.startswith("head."))
        quantum = self.template.param_count if self.config.quantum else 0
        return {"classical": classical, "quantum": quantum, "head": head}

    def get_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.parameters().values()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for v in self.parameters().values():
            v[...] = flat[pos : pos + v.size].reshape(v.shape)
            pos += v.size
        if pos != flat.size:
            raise ValueError("flat parameter vector has the wrong length")

    # --- forward / backward ------------------------------------------------------

    def _inputs(self, grids) -> np.ndarray:
        grids = np.asarray(grids, dtype=float)
        if grids.ndim == 2:
            grids = grids[None]
        want = (self.config.height, self.config.width)
        if grids.ndim != 3 or grids.shape[1:] != want:
            raise ValueError(f"model expects {want[0]}x{want[1]} grids, got shape {grids.shape}")
        if grids.shape[0] == 0:
            raise ValueError("empty batch")
        # {0, 1, 2} -> {-1, 0, 1}
        return (grids - 1.0)[:, None]

    def _quantum_outputs(self, u: np.ndarray) -> np.ndarray:
        n = self.config.n_qubits
        states = encode_batch(u, self.encoding)
        angles = self.theta[self.template.slot_params]
        return qstate.expectations_z(run_batch(self.template, angles, states), n)

    def logits(self, grids) -> np.ndarray:
        u = np.tanh(self.classical.forward(self._inputs(grids)))
        feats = self._quantum_outputs(u) if self.config.quantum else u
        return self.head.forward(feats)

    def predict_proba(self, grids) -> np.ndarray:
        return nn.softmax(self.logits(grids), axis=1)

    def loss_and_grads(self, grids, labels) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy and its gradient for every parameter."""
        x = self._inputs(grids)
        labels = np.asarray(labels, dtype=int).reshape(-1)
        if labels.shape[0] != x.shape[0]:
            raise ValueError("one label per grid required")
        if np.any(labels < 0) or np.any(labels >= self.config.n_classes):
            raise ValueError("label out of range")
        cfg = self.config
        u = np.tanh(self.classical.forward(x))
        d_theta = None
        if not cfg.quantum:
            feats = u
        elif self.encoding.scheme == "angle":
            feats, d_par, d_ang = quantum_jacobian(
                self.template, self.theta, input_angles=self.encoding.angles(u), axis=self.encoding.axis
            )
        else:
            states = encode_batch(u, self.encoding)
            feats, d_par, _ = quantum_jacobian(self.template, self.theta, states=states)

        probs = nn.softmax(self.head.forward(feats), axis=1)
        loss = nn.cross_entropy(probs, labels)
        n = x.shape[0]
        d_logits = probs.copy()
        d_logits[np.arange(n), labels] -= 1.0
        d_logits /= n
        d_feats = self.head.backward(d_logits)

        train_classical = True
        if not cfg.quantum:
            du = d_feats
        else:
            d_theta = np.einsum("nq,nqp->p", d_feats, d_par)
            if self.encoding.scheme == "angle":
                du = np.einsum("nq,nqk->nk", d_feats, d_ang) * self.encoding.angle_scale
            else:
                # the encoding has no input derivative; the classical stage stays frozen
                train_classical = False

        grads = {}
        if train_classical:
            self.classical.backward(du * (1.0 - u**2))
            grads.update(self.classical.gradients("classical"))
        else:
            grads.update({k: np.zeros_like(v) for k, v in self.classical.parameters("classical").items()})
        if d_theta is not None:
            grads["quantum.theta"] = d_theta
        grads.update(self.head.gradients("head"))
        return loss, grads

    def evaluate(self, ds: WaferDataset, batch_size: int = 256) -> tuple[float, float]:
        """(mean loss, accuracy) over a dataset, no augmentation."""
        if len(ds) == 0:
            raise ValueError("cannot evaluate on an empty dataset")
        total, correct = 0.0, 0
        for start in range(0, len(ds), batch_size):
            g = ds.grids[start : start + batch_size]
            y = ds.labels[start : start + batch_size]
            probs = self.predict_proba(g)
            total += nn.cross_entropy(probs, y) * len(y)
            correct += int(np.sum(argmax_lowest(probs) == y))
        return total / len(ds), correct / len(ds)


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; exact ties go to the lowest class index."""
    return np.argmax(np.atleast_2d(probs), axis=1)


def forward(model: HybridModel, sample: WaferSample) -> np.ndarray:
    return model.predict_proba(sample.grid)[0]


def predict(model: HybridModel, samples) -> np.ndarray:
    if isinstance(samples, WaferDataset):
        grids = samples.grids
    elif isinstance(samples, WaferSample):
        grids = samples.grid[None]
    else:
        grids = np.asarray(samples)
    return argmax_lowest(model.predict_proba(grids))


def loss_and_grads(model: HybridModel, grids, labels):
    return model.loss_and_grads(grids, labels)


def finite_difference_grads(model: HybridModel, grids, labels, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of the loss for every parameter entry."""
    out = {}
    for name, p in model.parameters().items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = model.loss_and_grads(grids, labels)[0]
            flat[i] = old - h
            lm = model.loss_and_grads(grids, labels)[0]
            flat[i] = old
            gflat[i] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def kink_free_batch(model: HybridModel, rng, size: int, min_margin: float = 1e-4, tries: int = 500):
    """Random grids and labels whose ReLU inputs all stay ``min_margin`` away from zero.

    Finite differences are meaningless across a ReLU kink, so draws that land
    within a step of one are rejected.
    """
    cfg = model.config
    for _ in range(tries):
        grids = rng.integers(0, 3, (size, cfg.height, cfg.width))
        labels = rng.integers(0, cfg.n_classes, size)
        model.logits(grids)
        if model.classical.kink_margin() >= min_margin:
            return grids, labels
    raise RuntimeError("could not draw a batch away from ReLU kinks")


# --- optimizers ----------------------------------------------------------------


class SGD:
    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        for name, p in params.items():
            g = grads[name]
            if self.momentum:
                v = self.velocity.setdefault(name, np.zeros_like(p))
                v *= self.momentum
                v += g
                g = v
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: tuple = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # lr = 0 is allowed as a frozen-model control run
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ValueError("lr must be finite and >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {', '.join(OPTIMIZERS)}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        object.__setattr__(self, "augment", tuple(self.augment))
        for op in self.augment:
            if op not in AUGMENTATIONS:
                raise ValueError(f"unknown augmentation {op!r}; choose from {', '.join(AUGMENTATIONS)}")

    def make_optimizer(self):
        if self.optimizer == "adam":
            return Adam(self.lr, self.beta1, self.beta2, self.eps)
        return SGD(self.lr, self.momentum if self.optimizer == "momentum" else 0.0)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float | None


@dataclass
class TrainRecord:
    history: list[EpochMetrics] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def final(self) -> EpochMetrics:
        return self.history[-1]


def train(
    model: HybridModel,
    train_set: WaferDataset,
    cfg: TrainConfig,
    test_set: WaferDataset | None = None,
    on_epoch=None,
) -> TrainRecord:
    """Mini-batch training. Per-epoch loss and accuracy are measured on the
    un-augmented training set after the epoch's updates."""
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if test_set is not None and len(test_set) == 0:
        test_set = None
    if "rotate90" in cfg.augment and model.config.height != model.config.width:
        raise ValueError("rotate90 augmentation needs square grids")
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.make_optimizer()
    params = model.parameters()
    record = TrainRecord()
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grids = train_set.grids[idx]
            if cfg.augment:
                grids = np.stack([augment(g, cfg.augment, rng) for g in grids])
            _, grads = model.loss_and_grads(grids, train_set.labels[idx])
            opt.step(params, grads)
        loss, train_acc = model.evaluate(train_set)
        test_acc = model.evaluate(test_set)[1] if test_set is not None else None
        m = EpochMetrics(epoch, loss, train_acc, test_acc)
        record.history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    record.seconds = time.perf_counter() - t0
    record.params = {k: v.copy() for k, v in params.items()}
    return record


# --- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = b"HQN1"


def dumps_model(model: HybridModel) -> bytes:
    params = model.parameters()
    header = {
        "config": asdict(model.config),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.values())
    return CHECKPOINT_MAGIC + len(head).to_bytes(4, "little") + head + body


def loads_model(blob: bytes) -> HybridModel:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an HQN1 checkpoint (bad magic)")
    if len(blob) < 8:
        raise ValueError("checkpoint truncated in the header")
    hlen = int.from_bytes(blob[4:8], "little")
    if 8 + hlen > len(blob):
        raise ValueError("checkpoint truncated in the header")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
        arrays = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"invalid checkpoint header: {exc}") from exc
    model = HybridModel(config)
    params = model.parameters()
    names = [a.get("name") for a in arrays]
    if names != list(params):
        raise ValueError("checkpoint arrays do not match the model layout")
    pos = 8 + hlen
    for a in arrays:
        target = params[a["name"]]
        if tuple(a.get("shape", ())) != target.shape:
            raise ValueError(f"array {a['name']} has shape {a.get('shape')}, expected {list(target.shape)}")
        nbytes = target.size * 8
        if pos + nbytes > len(blob):
            raise ValueError("checkpoint truncated in the parameter block")
        values = np.frombuffer(blob, dtype="<f8", count=target.size, offset=pos)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"array {a['name']} contains non-finite values")
        target[...] = values.reshape(target.shape)
        pos += nbytes
    if pos != len(blob):
        raise ValueError("trailing bytes after the parameter block")
    return model


def save_model(model: HybridModel, path) -> None:
    atomic_write(path, dumps_model(model), mode="wb")


def load_model(path) -> HybridModel:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
