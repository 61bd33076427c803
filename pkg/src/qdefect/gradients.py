"""Parameter-shift gradients of <sigma_z> outputs, plus a finite-difference oracle.

Single-qubit rotations use the two-term rule
    dE/dtheta = [E(theta + pi/2) - E(theta - pi/2)] / 2.

A controlled rotation CR(theta) = exp(-i theta/2 P1 (x) sigma) is split through
the control projector P1 = (1 - Z_c)/2 into two commuting factors,

    CR(theta) = exp(-i (theta/2)/2 sigma_t) * exp(-i (-theta/2)/2 Z_c sigma_t),

each with Pauli-type generator and hence its own two-term rule. The chain rule
gives four evaluations with shifts of +-pi/2 on one factor at a time and
coefficients +-1/4. A shift s on the first factor turns the gate into
"R(s) on control-0, R(theta + s) on control-1"; a shift s on the second gives
"R(s) on control-0, R(theta - s) on control-1". ``run_batch`` evaluates those
shifted gates through its ``zero_branch`` argument.
"""

from __future__ import annotations

import numpy as np

from . import qstate
from .circuits import BoundCircuit, CircuitTemplate, run_batch
from .encoders import EncodingSpec, product_states
from .qstate import CONTROLLED_ROTATIONS, ROTATIONS, Statevector

HALF_PI = np.pi / 2


def shift_plan(template: CircuitTemplate) -> list[tuple[int, float, float, float]]:
    """Rows ``(slot, angle shift, control-0 branch angle, coefficient)`` for every parametrized slot."""
    plan = []
    j = 0
    for slot in template.slots:
        if slot.param is None:
            continue
        if slot.kind in ROTATIONS:
            plan += [(j, HALF_PI, 0.0, 0.5), (j, -HALF_PI, 0.0, -0.5)]
        elif slot.kind in CONTROLLED_ROTATIONS:
            plan += [
                (j, HALF_PI, HALF_PI, 0.25),
                (j, -HALF_PI, -HALF_PI, -0.25),
                (j, -HALF_PI, HALF_PI, -0.25),
                (j, HALF_PI, -HALF_PI, 0.25),
            ]
        else:
            raise ValueError(f"no shift rule for parametrized {slot.kind}")
        j += 1
    return plan


def _slot_matrices(template: CircuitTemplate, slot, angles, zero=None) -> np.ndarray:
    """Full ``(R, D, D)`` unitaries of one slot for ``R`` angle settings."""
    n = template.n_qubits
    dim = 2**n
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    r = angles.shape[0]
    eye = np.tile(np.eye(dim, dtype=complex), (r, 1))
    psi = qstate.as_tensor(eye, n)
    if slot.param is None:
        qstate.apply_gate_batch(psi, qstate.Gate(slot.kind, slot.wires))
    else:
        theta = np.repeat(angles, dim)
        pauli = slot.kind[-1].lower()
        if slot.kind in ROTATIONS:
            qstate.rotate_single(psi, slot.wires[0], pauli, theta)
        else:
            theta_zero = None if zero is None else np.repeat(np.asarray(zero, dtype=float), dim)
            qstate.rotate_controlled(psi, slot.wires[0], slot.wires[1], pauli, theta, theta_zero)
    # row j of each block is U e_j, i.e. column j of U
    return np.swapaxes(eye.reshape(r, dim, dim), 1, 2)


def _z_diagonals(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    return np.array([1.0 - 2.0 * ((idx >> (n - 1 - q)) & 1) for q in range(n)])


def quantum_jacobian(
    template: CircuitTemplate,
    params: np.ndarray,
    states: np.ndarray | None = None,
    input_angles: np.ndarray | None = None,
    axis: str = "X",
    method: str = "auto",
):
    """Outputs and exact parameter-shift derivatives for a batch of inputs.

    Pass either prepared ``states`` ``(N, 2**n)`` or encoding ``input_angles``
    ``(N, n)`` (product of ``R_axis`` rotations on |0...0>). Returns
    ``(E, dE/dparams, dE/dangles)`` with shapes ``(N, n)``, ``(N, n, P)`` and
    ``(N, n, n)``; the last is ``None`` when states were given.

    ``method="direct"`` simulates every shifted circuit on its own.
    ``method="heisenberg"`` evaluates the same shifted expectations as
    <phi| U_after^dag Z U_after |phi>, propagating the observables backwards
    once per call; because the parameters are shared by the whole batch this
    is much cheaper. ``"auto"`` picks heisenberg up to 10 qubits.
    """
    if method == "auto":
        method = "heisenberg" if template.n_qubits <= 10 else "direct"
    if method not in ("direct", "heisenberg"):
        raise ValueError(f"unknown method {method!r}")
    n = template.n_qubits
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.shape[0] != template.param_count:
        raise ValueError("parameter count does not match the template")
    shifted_states = None
    if input_angles is not None:
        input_angles = np.asarray(input_angles, dtype=float)
        n_samples = input_angles.shape[0]
        shifted = np.repeat(input_angles[:, None, :], 2 * n, axis=1)
        for k in range(n):
            shifted[:, 2 * k, k] += HALF_PI
            shifted[:, 2 * k + 1, k] -= HALF_PI
        base_states = product_states(input_angles, axis)
        shifted_states = product_states(shifted.reshape(-1, n), axis).reshape(n_samples, 2 * n, -1)
    else:
        base_states = np.asarray(states, dtype=complex)
        if base_states.ndim != 2 or base_states.shape[1] != 2**n:
            raise ValueError(f"expected a (N, {2**n}) state stack")
        n_samples = base_states.shape[0]

    if method == "direct":
        values, d_slots, shifted_ev = _direct(template, params, base_states, shifted_states)
    else:
        values, d_slots, shifted_ev = _heisenberg(template, params, base_states, shifted_states)

    d_params = np.zeros((n_samples, n, template.param_count))
    np.add.at(d_params, (slice(None), slice(None), template.slot_params), d_slots)
    d_angles = None
    if shifted_ev is not None:
        sh = shifted_ev.reshape(n_samples, n, 2, n)
        # sh[s, k, +/-, q] -> dE_q / d angle_k
        d_angles = np.moveaxis(0.5 * (sh[:, :, 0, :] - sh[:, :, 1, :]), 1, 2)
    return values, d_params, d_angles


def _direct(template, params, base_states, shifted_states):
    n = template.n_qubits
    n_samples = base_states.shape[0]
    base = params[template.slot_params]
    n_slots = base.shape[0]
    plan = shift_plan(template)
    n_rows = 1 + len(plan)
    angles = np.tile(base, (n_rows, 1))
    zero_branch = np.zeros_like(angles)
    for r, (j, delta, z, _) in enumerate(plan, start=1):
        angles[r, j] += delta
        zero_branch[r, j] = z
    coef = np.array([c for *_, c in plan])
    slot_of = np.array([j for j, *_ in plan], dtype=int)

    rows = np.repeat(base_states[:, None, :], n_rows, axis=1)
    row_angles = np.broadcast_to(angles, (n_samples, n_rows, n_slots))
    row_zero = np.broadcast_to(zero_branch, (n_samples, n_rows, n_slots))
    if shifted_states is not None:
        rows = np.concatenate([rows, shifted_states], axis=1)
        extra = np.broadcast_to(base, (n_samples, 2 * n, n_slots))
        row_angles = np.concatenate([row_angles, extra], axis=1)
        row_zero = np.concatenate([row_zero, np.zeros_like(extra)], axis=1)
    total = rows.shape[1]
    out = run_batch(
        template,
        row_angles.reshape(-1, n_slots),
        rows.reshape(n_samples * total, -1),
        row_zero.reshape(-1, n_slots),
    )
    ev = qstate.expectations_z(out, n).reshape(n_samples, total, n)
    d_slots = np.zeros((n_samples, n, n_slots))
    if plan:
        np.add.at(
            d_slots,
            (slice(None), slice(None), slot_of),
            np.moveaxis(ev[:, 1:n_rows, :] * coef[None, :, None], 1, 2),
        )
    shifted_ev = ev[:, n_rows:, :] if shifted_states is not None else None
    return ev[:, 0, :], d_slots, shifted_ev


def _expect(phi: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """<phi|O_q|phi> for phi ``(..., D)`` and observables ``(n, D, D)``; returns ``(..., n)``."""
    flat = phi.reshape(-1, phi.shape[-1])
    applied = np.matmul(flat[None, :, :], np.swapaxes(obs, 1, 2))
    vals = (flat.conj()[None] * applied).sum(axis=-1).real
    return vals.T.reshape(phi.shape[:-1] + (obs.shape[0],))


def _heisenberg(template, params, base_states, shifted_states):
    n = template.n_qubits
    n_samples = base_states.shape[0]
    base = params[template.slot_params]
    plan = shift_plan(template)
    rows_of = {}
    for j, delta, z, c in plan:
        rows_of.setdefault(j, []).append((delta, z, c))

    slots = template.slots
    mats = []
    j = 0
    for slot in slots:
        if slot.param is None:
            mats.append(_slot_matrices(template, slot, [0.0])[0])
        else:
            mats.append(_slot_matrices(template, slot, [base[j]])[0])
            j += 1

    prefix = [base_states]
    for u in mats:
        prefix.append(prefix[-1] @ u.T)

    obs = np.zeros((n, 2**n, 2**n), dtype=complex)
    obs[:, np.arange(2**n), np.arange(2**n)] = _z_diagonals(n)
    d_slots = np.zeros((n_samples, n, base.shape[0]))
    j = base.shape[0]
    for k in range(len(slots) - 1, -1, -1):
        slot = slots[k]
        if slot.param is not None:
            j -= 1
            shifts = rows_of[j]
            delta = np.array([d for d, _, _ in shifts])
            zero = np.array([z for _, z, _ in shifts])
            coef = np.array([c for _, _, c in shifts])
            g = _slot_matrices(template, slot, base[j] + delta, zero)
            phi = np.matmul(prefix[k][None, :, :], np.swapaxes(g, 1, 2))
            d_slots[:, :, j] = np.tensordot(coef, _expect(phi, obs), axes=(0, 0))
        u = mats[k]
        obs = u.conj().T @ obs @ u

    values = _expect(base_states, obs)
    shifted_ev = _expect(shifted_states, obs) if shifted_states is not None else None
    return values, d_slots, shifted_ev


def _check_output(circuit: BoundCircuit, state: Statevector, output_qubit: int) -> None:
    if state.n_qubits != circuit.template.n_qubits:
        raise ValueError("input dimension does not match the circuit")
    if not 0 <= output_qubit < circuit.template.n_qubits:
        raise ValueError(f"output qubit {output_qubit} out of range")


def param_shift(circuit: BoundCircuit, state: Statevector, output_qubit: int) -> np.ndarray:
    """d<sigma_z(output_qubit)>/d(params) by the parameter-shift rule."""
    _check_output(circuit, state, output_qubit)
    _, d_params, _ = quantum_jacobian(
        circuit.template, circuit.params, states=state.amplitudes[None, :]
    )
    return d_params[0, output_qubit]


def _expectation(template, params, state, output_qubit):
    out = run_batch(template, params[template.slot_params], state.amplitudes[None, :])
    return qstate.expectations_z(out, template.n_qubits)[0, output_qubit]


def finite_diff(
    circuit: BoundCircuit, state: Statevector, output_qubit: int, h: float = 1e-4
) -> np.ndarray:
    """Central differences; the oracle the shift rules are checked against."""
    if not 0 < h <= 1e-2:
        raise ValueError(f"step h must lie in (0, 1e-2], got {h}")
    _check_output(circuit, state, output_qubit)
    template = circuit.template
    grad = np.zeros(template.param_count)
    for j in range(template.param_count):
        plus = circuit.params.copy()
        minus = circuit.params.copy()
        plus[j] += h
        minus[j] -= h
        grad[j] = (
            _expectation(template, plus, state, output_qubit)
            - _expectation(template, minus, state, output_qubit)
        ) / (2 * h)
    return grad


def input_angle_grad(
    circuit: BoundCircuit, x, output_qubit: int, spec: EncodingSpec | None = None
) -> np.ndarray:
    """d<sigma_z(output_qubit)>/dx for angle-encoded features ``x`` in [-1, 1].

    The shift rule runs on the encoding rotations; the affine angle map then
    contributes its slope (pi/2 for the default map). Chaining through an
    upstream tanh is the caller's job.
    """
    n = circuit.template.n_qubits
    spec = spec or EncodingSpec("angle", n)
    if spec.scheme != "angle":
        raise ValueError(f"{spec.scheme} encoding is not differentiable with respect to its input")
    if spec.n_qubits != n:
        raise ValueError("encoding width does not match the circuit")
    if not 0 <= output_qubit < n:
        raise ValueError(f"output qubit {output_qubit} out of range")
    x = np.asarray(x, dtype=float).reshape(1, n)
    _, _, d_angles = quantum_jacobian(
        circuit.template, circuit.params, input_angles=spec.angles(x), axis=spec.axis
    )
    return d_angles[0, output_qubit] * spec.angle_scale
