"""Dense statevector simulation of small qubit registers.

Qubit 0 is the most significant bit of the basis index, so for two qubits
``|01>`` (qubit 0 in ``|0>``, qubit 1 in ``|1>``) is amplitude index 1.

The kernels below work on stacks of states with shape ``(B, 2**n)`` so the
circuit runner can push many parameter settings through one gate at a time;
a single :class:`Statevector` is just the ``B == 1`` case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_QUBITS = 20

ROTATIONS = frozenset({"Rx", "Ry", "Rz"})
CONTROLLED_ROTATIONS = frozenset({"CRx", "CRy", "CRz"})
FIXED_ONE_QUBIT = frozenset({"H", "X"})
GATE_KINDS = ROTATIONS | CONTROLLED_ROTATIONS | FIXED_ONE_QUBIT | {"CNOT"}

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)

PAULI = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}


def rotation_matrices(axis: str, theta) -> np.ndarray:
    """exp(-i theta/2 sigma_axis) for each angle; returns shape ``theta.shape + (2, 2)``."""
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    m = np.empty(theta.shape + (2, 2), dtype=complex)
    axis = axis.lower()
    if axis == "x":
        m[..., 0, 0] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
        m[..., 1, 1] = c
    elif axis == "y":
        m[..., 0, 0] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
        m[..., 1, 1] = c
    elif axis == "z":
        m[..., 0, 0] = c - 1j * s
        m[..., 0, 1] = 0
        m[..., 1, 0] = 0
        m[..., 1, 1] = c + 1j * s
    else:
        raise ValueError(f"unknown rotation axis {axis!r}")
    return m


def _axis_of(kind: str) -> str:
    return kind[-1].lower()


@dataclass(frozen=True)
class Gate:
    """One gate instance. ``qubits`` is ``(target,)`` or ``(control, target)``."""

    kind: str
    qubits: tuple
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unsupported gate kind {self.kind!r}")
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qubits)
        n_wires = 2 if self.kind in CONTROLLED_ROTATIONS or self.kind == "CNOT" else 1
        if len(qubits) != n_wires:
            raise ValueError(f"{self.kind} acts on {n_wires} qubit(s), got {qubits}")
        if n_wires == 2 and qubits[0] == qubits[1]:
            raise ValueError("control and target must differ")
        if self.kind in ROTATIONS or self.kind in CONTROLLED_ROTATIONS:
            if self.angle is None:
                raise ValueError(f"{self.kind} needs an angle")
            object.__setattr__(self, "angle", float(self.angle))
        elif self.angle is not None:
            raise ValueError(f"{self.kind} takes no angle")

    @property
    def parametrized(self) -> bool:
        return self.angle is not None

    def inverse(self) -> "Gate":
        if self.angle is None:
            return self
        return Gate(self.kind, self.qubits, -self.angle)

    def matrix(self) -> np.ndarray:
        """Single-qubit block acting on the target (controlled kinds: the control-1 block)."""
        if self.kind == "H":
            return HADAMARD.copy()
        if self.kind in ("X", "CNOT"):
            return SIGMA_X.copy()
        return rotation_matrices(_axis_of(self.kind), self.angle)


@dataclass
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2**self.n_qubits:
            raise ValueError(
                f"{self.n_qubits} qubits need {2**self.n_qubits} amplitudes, got {amps.shape[0]}"
            )
        self.amplitudes = amps

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "Statevector":
        return Statevector(self.n_qubits, self.amplitudes.copy())


def _check_n(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")


def zero_state(n_qubits: int) -> Statevector:
    _check_n(n_qubits)
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return Statevector(n_qubits, amps)


def basis_state(n_qubits: int, index: int) -> Statevector:
    _check_n(n_qubits)
    if not 0 <= index < 2**n_qubits:
        raise ValueError(f"basis index {index} out of range")
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[index] = 1.0
    return Statevector(n_qubits, amps)


# --- batched kernels -------------------------------------------------------
#
# ``psi`` is a tensor view of shape (B, 2, 2, ..., 2); qubit q lives on axis q + 1.
# Matrices are (2, 2) (shared) or (B, 2, 2) (one per row).


def _apply_block(view: np.ndarray, axis: int, m: np.ndarray) -> None:
    v = np.moveaxis(view, axis, 1)
    a0 = v[:, 0]
    a1 = v[:, 1]
    if m.ndim == 3:
        shape = (m.shape[0],) + (1,) * (a0.ndim - 1)
        m = m.reshape((m.shape[0], 2, 2) + shape[1:])
        new0 = m[:, 0, 0] * a0 + m[:, 0, 1] * a1
        new1 = m[:, 1, 0] * a0 + m[:, 1, 1] * a1
    else:
        new0 = m[0, 0] * a0 + m[0, 1] * a1
        new1 = m[1, 0] * a0 + m[1, 1] * a1
    v[:, 0] = new0
    v[:, 1] = new1


def _apply_rotation(view: np.ndarray, axis: int, pauli: str, theta) -> None:
    """exp(-i theta/2 sigma) on one axis; ``theta`` is a scalar or one angle per row."""
    v = np.moveaxis(view, axis, 1)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim:
        theta = theta.reshape((theta.shape[0],) + (1,) * (v.ndim - 2))
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    a0 = v[:, 0]
    a1 = v[:, 1]
    if pauli == "z":
        phase = c - 1j * s
        a0 *= phase
        a1 *= phase.conj()
        return
    if pauli == "x":
        new0 = c * a0 - 1j * (s * a1)
        new1 = c * a1 - 1j * (s * a0)
    else:
        new0 = c * a0 - s * a1
        new1 = s * a0 + c * a1
    v[:, 0] = new0
    v[:, 1] = new1


def rotate_single(psi: np.ndarray, target: int, pauli: str, theta) -> None:
    _apply_rotation(psi, target + 1, pauli, theta)


def rotate_controlled(psi: np.ndarray, control: int, target: int, pauli: str, theta, theta_zero=None) -> None:
    """Controlled rotation; ``theta_zero`` (if given) rotates the target on the control-0 branch."""
    t_axis = target + 1 if target < control else target
    index = (slice(None),) * (control + 1)
    _apply_rotation(psi[index + (1,)], t_axis, pauli, theta)
    if theta_zero is not None:
        _apply_rotation(psi[index + (0,)], t_axis, pauli, theta_zero)


def apply_single(psi: np.ndarray, target: int, m: np.ndarray) -> None:
    _apply_block(psi, target + 1, m)


def apply_controlled(
    psi: np.ndarray, control: int, target: int, m: np.ndarray, m_zero: np.ndarray | None = None
) -> None:
    """Apply ``m`` to the target on the control-1 branch, ``m_zero`` (if any) on control-0."""
    t_axis = target + 1 if target < control else target
    index = (slice(None),) * (control + 1)
    _apply_block(psi[index + (1,)], t_axis, m)
    if m_zero is not None:
        _apply_block(psi[index + (0,)], t_axis, m_zero)


def apply_gate_batch(psi: np.ndarray, gate: Gate) -> None:
    """Apply one fixed gate to every row of a ``(B, 2, ..., 2)`` tensor, in place."""
    if gate.kind in CONTROLLED_ROTATIONS or gate.kind == "CNOT":
        apply_controlled(psi, gate.qubits[0], gate.qubits[1], gate.matrix())
    else:
        apply_single(psi, gate.qubits[0], gate.matrix())


def as_tensor(states: np.ndarray, n_qubits: int) -> np.ndarray:
    return states.reshape((states.shape[0],) + (2,) * n_qubits)


def expectations_z(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """<sigma_z> on every qubit for a ``(B, 2**n)`` stack; returns ``(B, n)``."""
    probs = np.abs(states) ** 2
    b = probs.shape[0]
    out = np.empty((b, n_qubits))
    for q in range(n_qubits):
        p = probs.reshape(b, 2**q, 2, 2 ** (n_qubits - q - 1)).sum(axis=(1, 3))
        out[:, q] = p[:, 0] - p[:, 1]
    return out


def reduced_purities(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """Tr(rho_k^2) of every single-qubit marginal for a ``(B, 2**n)`` stack; returns ``(B, n)``."""
    b = states.shape[0]
    out = np.empty((b, n_qubits))
    for q in range(n_qubits):
        psi = states.reshape(b, 2**q, 2, 2 ** (n_qubits - q - 1))
        rho = np.einsum("blir,bljr->bij", psi, psi.conj())
        out[:, q] = np.einsum("bij,bji->b", rho, rho).real
    return out


# --- single-state API -------------------------------------------------------


def _check_qubit(state: Statevector, q: int) -> None:
    if not 0 <= q < state.n_qubits:
        raise ValueError(f"qubit {q} out of range for {state.n_qubits} qubits")


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    """Apply ``gate`` to ``state`` in place and return it."""
    for q in gate.qubits:
        _check_qubit(state, q)
    psi = as_tensor(state.amplitudes.reshape(1, -1), state.n_qubits)
    apply_gate_batch(psi, gate)
    return state


def expectation_z(state: Statevector, qubit: int) -> float:
    _check_qubit(state, qubit)
    return float(expectations_z(state.amplitudes.reshape(1, -1), state.n_qubits)[0, qubit])


def fidelity(a: Statevector, b: Statevector) -> float:
    if a.n_qubits != b.n_qubits:
        raise ValueError(f"dimension mismatch: {a.n_qubits} vs {b.n_qubits} qubits")
    # real arithmetic written so that swapping a and b only flips the sign of im
    ar, ai = a.amplitudes.real, a.amplitudes.imag
    br, bi = b.amplitudes.real, b.amplitudes.imag
    re = np.sum(ar * br + ai * bi)
    im = np.sum(ar * bi - ai * br)
    return float(re * re + im * im)


def reduced_purity(state: Statevector, qubit: int) -> float:
    _check_qubit(state, qubit)
    psi = state.amplitudes.reshape(2**qubit, 2, -1)
    rho = np.einsum("iak,ibk->ab", psi, psi.conj())
    return float(np.trace(rho @ rho).real)
