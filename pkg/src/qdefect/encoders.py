"""Classical-to-quantum feature maps: basis, amplitude and angle encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qstate import MAX_QUBITS, Statevector, _check_n

SCHEMES = ("basis", "amplitude", "angle")
AXES = ("X", "Y", "Z")
RANGE_SLACK = 1e-9


@dataclass(frozen=True)
class EncodingSpec:
    scheme: str = "angle"
    n_qubits: int = 4
    axis: str = "X"
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        scheme = self.scheme.lower()
        if scheme not in SCHEMES:
            raise ValueError(f"unknown encoding scheme {self.scheme!r}")
        object.__setattr__(self, "scheme", scheme)
        axis = self.axis.upper()
        if axis not in AXES:
            raise ValueError(f"unknown encoding axis {self.axis!r}")
        object.__setattr__(self, "axis", axis)
        _check_n(self.n_qubits)
        if not self.hi > self.lo:
            raise ValueError("angle map needs hi > lo")

    def angles(self, x) -> np.ndarray:
        """Affine map [lo, hi] -> [0, pi]."""
        x = np.asarray(x, dtype=float)
        return (x - self.lo) * (np.pi / (self.hi - self.lo))

    @property
    def angle_scale(self) -> float:
        """d(angle)/dx of the affine map."""
        return np.pi / (self.hi - self.lo)


def basis_encode(bits: str) -> Statevector:
    if not bits or any(ch not in "01" for ch in bits):
        raise ValueError(f"basis encoding needs a nonempty 0/1 string, got {bits!r}")
    n = len(bits)
    _check_n(n)
    amps = np.zeros(2**n, dtype=complex)
    # qubit 0 is the most significant bit, so the string reads directly as binary
    amps[int(bits, 2)] = 1.0
    return Statevector(n, amps)


def amplitude_encode(x, n_qubits: int) -> Statevector:
    return Statevector(n_qubits, amplitude_states(np.atleast_2d(x), n_qubits)[0])


def amplitude_states(x: np.ndarray, n_qubits: int) -> np.ndarray:
    """Pad each row with zeros to ``2**n_qubits`` and normalize it; returns ``(B, 2**n)``."""
    _check_n(n_qubits)
    x = np.asarray(x, dtype=float)
    dim = 2**n_qubits
    if x.shape[-1] > dim:
        raise ValueError(f"{x.shape[-1]} features do not fit in {n_qubits} qubits")
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms == 0):
        raise ValueError("amplitude encoding of an all-zero vector is undefined")
    out = np.zeros((x.shape[0], dim), dtype=complex)
    out[:, : x.shape[-1]] = x / norms[:, None]
    return out


def single_qubit_columns(axis: str, theta: np.ndarray) -> np.ndarray:
    """R_axis(theta)|0> for every angle; returns ``theta.shape + (2,)``."""
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    col = np.empty(theta.shape + (2,), dtype=complex)
    if axis == "X":
        col[..., 0] = c
        col[..., 1] = -1j * s
    elif axis == "Y":
        col[..., 0] = c
        col[..., 1] = s
    else:
        col[..., 0] = c - 1j * s
        col[..., 1] = 0
    return col


def product_states(theta: np.ndarray, axis: str = "X") -> np.ndarray:
    """Tensor product of per-qubit rotations of |0>; ``theta`` is ``(B, n)``, returns ``(B, 2**n)``."""
    theta = np.asarray(theta, dtype=float)
    cols = single_qubit_columns(axis.upper(), theta)
    out = cols[:, 0, :]
    for q in range(1, theta.shape[1]):
        out = (out[:, :, None] * cols[:, q, None, :]).reshape(theta.shape[0], -1)
    return out


def _check_angle_input(x: np.ndarray, spec: EncodingSpec) -> None:
    if x.shape[-1] != spec.n_qubits:
        raise ValueError(f"angle encoding needs {spec.n_qubits} features, got {x.shape[-1]}")
    if np.any(x < spec.lo - RANGE_SLACK) or np.any(x > spec.hi + RANGE_SLACK):
        raise ValueError(f"angle encoding inputs must lie in [{spec.lo}, {spec.hi}]")


def angle_encode(x, spec: EncodingSpec) -> Statevector:
    x = np.asarray(x, dtype=float).reshape(-1)
    if spec.scheme != "angle":
        raise ValueError(f"angle_encode called with a {spec.scheme} spec")
    _check_angle_input(x, spec)
    return Statevector(spec.n_qubits, product_states(spec.angles(x)[None, :], spec.axis)[0])


def encode_batch(features: np.ndarray, spec: EncodingSpec) -> np.ndarray:
    """Encode a ``(B, n_qubits)`` block of tanh features as a ``(B, 2**n)`` state stack.

    Basis encoding thresholds each feature at zero (one bit per qubit).
    """
    features = np.asarray(features, dtype=float)
    if spec.scheme == "angle":
        _check_angle_input(features, spec)
        return product_states(spec.angles(features), spec.axis)
    if spec.scheme == "amplitude":
        return amplitude_states(features, spec.n_qubits)
    if features.shape[-1] != spec.n_qubits:
        raise ValueError(f"basis encoding needs {spec.n_qubits} features, got {features.shape[-1]}")
    bits = (features > 0).astype(int)
    weights = 2 ** np.arange(spec.n_qubits - 1, -1, -1)
    out = np.zeros((features.shape[0], 2**spec.n_qubits), dtype=complex)
    out[np.arange(features.shape[0]), bits @ weights] = 1.0
    return out


__all__ = [
    "EncodingSpec",
    "MAX_QUBITS",
    "amplitude_encode",
    "amplitude_states",
    "angle_encode",
    "basis_encode",
    "encode_batch",
    "product_states",
]
