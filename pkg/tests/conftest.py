"""Shared helpers: an independent dense-matrix circuit oracle built from Kronecker products."""

from functools import reduce

import numpy as np
import pytest

I2 = np.eye(2, dtype=complex)
PX = np.array([[0, 1], [1, 0]], dtype=complex)
PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
PZ = np.array([[1, 0], [0, -1]], dtype=complex)
P0 = np.diag([1, 0]).astype(complex)
P1 = np.diag([0, 1]).astype(complex)
H2 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULIS = {"x": PX, "y": PY, "z": PZ}


def rot(axis, theta):
    """exp(-i theta/2 sigma) written out as cos/sin."""
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * PAULIS[axis]


def embed(ops, n):
    """Kronecker product with ``ops[q]`` on qubit q (qubit 0 leftmost) and identity elsewhere."""
    return reduce(np.kron, [ops.get(q, I2) for q in range(n)])


def gate_unitary(kind, wires, angle, n):
    if kind in ("Rx", "Ry", "Rz"):
        return embed({wires[0]: rot(kind[-1].lower(), angle)}, n)
    if kind == "H":
        return embed({wires[0]: H2}, n)
    if kind == "X":
        return embed({wires[0]: PX}, n)
    c, t = wires
    if kind == "CNOT":
        u = PX
    else:
        u = rot(kind[-1].lower(), angle)
    return embed({c: P0}, n) + embed({c: P1, t: u}, n)


def oracle_run(slots, params, n, psi0=None):
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    if psi0 is not None:
        psi = np.asarray(psi0, dtype=complex).copy()
    for kind, wires, p in slots:
        angle = None if p is None else params[p]
        psi = gate_unitary(kind, wires, angle, n) @ psi
    return psi


def oracle_z(psi, q, n):
    return float(np.real(np.vdot(psi, embed({q: PZ}, n) @ psi)))


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
