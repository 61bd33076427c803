"""Parametrized circuit templates and their execution.

Layouts (one layer; layers repeat with fresh parameters):

* ``basic``  Rx on every qubit, then CNOT(i, i+1) for i = 0..n-2.
* ``c5``     Rx, Rz on every qubit; CRz(c -> t) for every ordered pair, controls
             from n-1 down to 0 and, within a control, targets from n-1 down
             to 0; Rx, Rz on every qubit.
* ``c6``     as ``c5`` with CRx.
* ``c16``    Rx, Rz on every qubit; CRz(2k+1 -> 2k) for all k; CRz(2k+2 -> 2k+1) for all k.
* ``c17``    as ``c16`` with CRx.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import qstate
from .qstate import CONTROLLED_ROTATIONS, ROTATIONS, Gate, Statevector

KINDS = ("basic", "c5", "c6", "c16", "c17")


class Slot(NamedTuple):
    kind: str
    wires: tuple
    param: int | None = None


@dataclass(frozen=True)
class CircuitTemplate:
    kind: str
    n_qubits: int
    n_layers: int
    slots: tuple = field(repr=False)

    def __post_init__(self):
        qstate._check_n(self.n_qubits)
        indices = set()
        for slot in self.slots:
            Gate(slot.kind, slot.wires, 0.0 if slot.param is not None else None)
            if any(not 0 <= w < self.n_qubits for w in slot.wires):
                raise ValueError(f"slot {slot} addresses a qubit outside the register")
            if slot.param is not None:
                indices.add(slot.param)
        if indices != set(range(len(indices))):
            raise ValueError("parameter indices must be contiguous from 0")
        object.__setattr__(self, "param_count", len(indices))
        object.__setattr__(
            self,
            "slot_params",
            np.array([s.param for s in self.slots if s.param is not None], dtype=int),
        )

    @property
    def n_param_slots(self) -> int:
        return len(self.slot_params)

    def count(self, kind: str) -> int:
        return sum(1 for s in self.slots if s.kind == kind)


@dataclass
class BoundCircuit:
    template: CircuitTemplate
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float).reshape(-1)
        if self.params.shape[0] != self.template.param_count:
            raise ValueError(
                f"template takes {self.template.param_count} parameters, got {self.params.shape[0]}"
            )
        if not np.all(np.isfinite(self.params)):
            raise ValueError("circuit parameters must be finite")

    def gates(self) -> list[Gate]:
        return [
            Gate(s.kind, s.wires, None if s.param is None else self.params[s.param])
            for s in self.template.slots
        ]


class _Builder:
    def __init__(self):
        self.slots = []
        self.next_param = 0

    def rot(self, kind, *wires):
        self.slots.append(Slot(kind, tuple(wires), self.next_param))
        self.next_param += 1

    def fixed(self, kind, *wires):
        self.slots.append(Slot(kind, tuple(wires), None))


def _rx_rz_all(b: _Builder, n: int) -> None:
    for q in range(n):
        b.rot("Rx", q)
    for q in range(n):
        b.rot("Rz", q)


def build_template(kind: str, n_qubits: int, n_layers: int | None = None) -> CircuitTemplate:
    """Build one of the named layouts; ``n_layers`` defaults to ``n_qubits``."""
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unsupported circuit kind {kind!r}; choose from {', '.join(KINDS)}")
    n_layers = n_qubits if n_layers is None else n_layers
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    if n_qubits < 2:
        raise ValueError(f"{kind} entangles qubits and needs n_qubits >= 2")
    qstate._check_n(n_qubits)

    b = _Builder()
    for _ in range(n_layers):
        if kind == "basic":
            for q in range(n_qubits):
                b.rot("Rx", q)
            for q in range(n_qubits - 1):
                b.fixed("CNOT", q, q + 1)
        elif kind in ("c5", "c6"):
            ctrl = "CRz" if kind == "c5" else "CRx"
            _rx_rz_all(b, n_qubits)
            for c in range(n_qubits - 1, -1, -1):
                for t in range(n_qubits - 1, -1, -1):
                    if t != c:
                        b.rot(ctrl, c, t)
            _rx_rz_all(b, n_qubits)
        else:
            ctrl = "CRz" if kind == "c16" else "CRx"
            _rx_rz_all(b, n_qubits)
            for k in range(0, n_qubits - 1, 2):
                b.rot(ctrl, k + 1, k)
            for k in range(1, n_qubits - 1, 2):
                b.rot(ctrl, k + 1, k)
    return CircuitTemplate(kind, n_qubits, n_layers, tuple(b.slots))


def custom_template(n_qubits: int, slots, kind: str = "custom") -> CircuitTemplate:
    """Template from an explicit slot list (used for analysis baselines and tests)."""
    return CircuitTemplate(kind, n_qubits, 1, tuple(Slot(*s) for s in slots))


def expected_param_count(kind: str, n_qubits: int, n_layers: int) -> int:
    per_layer = {
        "basic": n_qubits,
        "c5": 4 * n_qubits + n_qubits * (n_qubits - 1),
        "c6": 4 * n_qubits + n_qubits * (n_qubits - 1),
        "c16": 2 * n_qubits + (n_qubits - 1),
        "c17": 2 * n_qubits + (n_qubits - 1),
    }[kind]
    return per_layer * n_layers


def run_batch(
    template: CircuitTemplate,
    slot_angles: np.ndarray,
    states: np.ndarray,
    zero_branch: np.ndarray | None = None,
) -> np.ndarray:
    """Push a ``(B, 2**n)`` stack through the template, one angle row per state.

    ``slot_angles`` is ``(B, n_param_slots)`` (or a single row shared by all
    states). For controlled rotations, ``zero_branch`` optionally gives the
    angle of a rotation applied to the target on the control-0 branch; the
    gradient code uses it to evaluate shifted generator terms.
    """
    n = template.n_qubits
    states = np.array(states, dtype=complex, copy=True)
    if states.ndim != 2 or states.shape[1] != 2**n:
        raise ValueError(f"expected a (B, {2**n}) state stack, got {states.shape}")
    b = states.shape[0]
    slot_angles = np.asarray(slot_angles, dtype=float)
    shared = slot_angles.ndim == 1
    if slot_angles.shape[-1] != template.n_param_slots:
        raise ValueError("angle count does not match the template")
    if not shared and slot_angles.shape[0] != b:
        raise ValueError("one angle row per state required")
    psi = qstate.as_tensor(states, n)
    j = 0
    for slot in template.slots:
        if slot.param is None:
            qstate.apply_gate_batch(psi, Gate(slot.kind, slot.wires))
            continue
        theta = slot_angles[j] if shared else slot_angles[:, j]
        pauli = slot.kind[-1].lower()
        if slot.kind in ROTATIONS:
            qstate.rotate_single(psi, slot.wires[0], pauli, theta)
        else:
            theta_zero = None
            if zero_branch is not None and np.any(zero_branch[:, j] != 0):
                theta_zero = zero_branch[:, j]
            qstate.rotate_controlled(psi, slot.wires[0], slot.wires[1], pauli, theta, theta_zero)
        j += 1
    return states


def _check_input(circuit: BoundCircuit, state: Statevector) -> None:
    if state.n_qubits != circuit.template.n_qubits:
        raise ValueError(
            f"input has {state.n_qubits} qubits, template has {circuit.template.n_qubits}"
        )


def run(circuit: BoundCircuit, state: Statevector) -> Statevector:
    _check_input(circuit, state)
    angles = circuit.params[circuit.template.slot_params]
    out = run_batch(circuit.template, angles, state.amplitudes[None, :])
    return Statevector(state.n_qubits, out[0])


def measure_all_z(circuit: BoundCircuit, state: Statevector) -> np.ndarray:
    out = run(circuit, state)
    return qstate.expectations_z(out.amplitudes[None, :], out.n_qubits)[0]


def is_controlled(kind: str) -> bool:
    return kind in CONTROLLED_ROTATIONS
