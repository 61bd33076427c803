import itertools

import numpy as np
import pytest

from qdefect.circuits import (
    KINDS,
    BoundCircuit,
    Slot,
    build_template,
    custom_template,
    expected_param_count,
    measure_all_z,
    run,
)
from qdefect.qstate import Statevector, zero_state

from conftest import oracle_run, random_state


def bound(kind, n, layers, params=None, rng=None):
    t = build_template(kind, n, layers)
    if params is None:
        params = rng.uniform(0, 2 * np.pi, t.param_count)
    return BoundCircuit(t, params)


class TestBuild:
    def test_basic_four_qubits_three_layers(self):
        t = build_template("basic", 4, 3)
        assert t.param_count == 12
        assert t.count("CNOT") == 9
        assert t.count("Rx") == 12

    def test_c5_one_layer(self):
        t = build_template("c5", 4, 1)
        assert t.param_count == 28
        assert t.count("CRz") == 12

    def test_c16_one_layer(self):
        t = build_template("c16", 4, 1)
        assert t.param_count == 11
        assert t.count("CRz") == 3

    def test_controlled_axes(self):
        assert build_template("c6", 3, 1).count("CRx") == 6
        assert build_template("c17", 3, 1).count("CRx") == 2

    def test_default_layers_equal_qubits(self):
        assert build_template("c5", 3).n_layers == 3

    @pytest.mark.parametrize("kind", KINDS)
    def test_counts_match_formula(self, kind):
        for n, layers in itertools.product(range(2, 9), range(1, 5)):
            t = build_template(kind, n, layers)
            assert t.param_count == expected_param_count(kind, n, layers)
            assert sorted(set(t.slot_params)) == list(range(t.param_count))

    def test_c5_entangler_order(self):
        t = build_template("c5", 3, 1)
        pairs = [s.wires for s in t.slots if s.kind == "CRz"]
        assert pairs == [(2, 1), (2, 0), (1, 2), (1, 0), (0, 2), (0, 1)]

    def test_c16_entangler_order(self):
        t = build_template("c16", 5, 1)
        pairs = [s.wires for s in t.slots if s.kind == "CRz"]
        assert pairs == [(1, 0), (3, 2), (2, 1), (4, 3)]

    def test_errors(self):
        with pytest.raises(ValueError):
            build_template("c7", 4, 1)
        with pytest.raises(ValueError):
            build_template("c5", 1, 1)
        with pytest.raises(ValueError):
            build_template("basic", 4, 0)
        with pytest.raises(ValueError):
            custom_template(2, [Slot("Rx", (0,), 1)])


class TestRun:
    @pytest.mark.parametrize("kind", ["c5", "c6", "c16", "c17"])
    def test_zero_params_identity(self, kind, rng):
        t = build_template(kind, 4, 2)
        psi = random_state(rng, 4)
        out = run(BoundCircuit(t, np.zeros(t.param_count)), Statevector(4, psi.copy()))
        assert np.max(np.abs(out.amplitudes - psi)) <= 1e-12

    def test_c5_zero_params_on_zero_state(self):
        out = run(bound("c5", 4, 1, np.zeros(28)), zero_state(4))
        assert np.allclose(out.amplitudes, zero_state(4).amplitudes)

    def test_basic_zero_params_on_zero_state(self):
        c = bound("basic", 4, 1, np.zeros(4))
        assert np.allclose(run(c, zero_state(4)).amplitudes, zero_state(4).amplitudes)
        assert np.allclose(measure_all_z(c, zero_state(4)), [1, 1, 1, 1])

    def test_single_rx(self):
        t = custom_template(1, [("Rx", (0,), 0)])
        assert measure_all_z(BoundCircuit(t, [np.pi / 2]), zero_state(1)) == pytest.approx([0], abs=1e-15)

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_kron_oracle(self, kind, rng):
        c = bound(kind, 4, 2, rng=rng)
        psi = random_state(rng, 4)
        out = run(c, Statevector(4, psi.copy()))
        ref = oracle_run(c.template.slots, c.params, 4, psi)
        assert np.max(np.abs(out.amplitudes - ref)) <= 1e-12
        z = measure_all_z(c, Statevector(4, psi.copy()))
        assert np.all(np.abs(z) <= 1)

    def test_input_not_mutated_and_deterministic(self, rng):
        c = bound("c5", 3, 2, rng=rng)
        s = Statevector(3, random_state(rng, 3))
        before = s.amplitudes.copy()
        a = run(c, s)
        b = run(c, s)
        assert np.array_equal(s.amplitudes, before)
        assert np.array_equal(a.amplitudes, b.amplitudes)
        assert abs(a.norm() - 1) <= 1e-12

    def test_errors(self, rng):
        t = build_template("c16", 3, 1)
        with pytest.raises(ValueError):
            BoundCircuit(t, np.zeros(t.param_count + 1))
        with pytest.raises(ValueError):
            BoundCircuit(t, np.full(t.param_count, np.nan))
        with pytest.raises(ValueError):
            run(BoundCircuit(t, np.zeros(t.param_count)), zero_state(4))


class TestCommutation:
    """CRz gates inside one entangling block can be reordered freely."""

    @pytest.mark.parametrize("kind", ["c5", "c16"])
    def test_permuted_entangler(self, kind, rng):
        t = build_template(kind, 4, 1)
        params = rng.uniform(0, 2 * np.pi, t.param_count)
        slots = list(t.slots)
        idx = [i for i, s in enumerate(slots) if s.kind == "CRz"]
        assert idx == list(range(idx[0], idx[-1] + 1))
        psi = random_state(rng, 4)
        ref = run(BoundCircuit(t, params), Statevector(4, psi.copy())).amplitudes
        for _ in range(10):
            perm = rng.permutation(idx)
            shuffled = slots[: idx[0]] + [slots[i] for i in perm] + slots[idx[-1] + 1 :]
            t2 = custom_template(4, shuffled)
            out = run(BoundCircuit(t2, params), Statevector(4, psi.copy())).amplitudes
            assert np.max(np.abs(out - ref)) <= 1e-12

    def test_crx_block_does_not_commute(self, rng):
        t = build_template("c6", 3, 1)
        params = rng.uniform(0, 2 * np.pi, t.param_count)
        slots = list(t.slots)
        idx = [i for i, s in enumerate(slots) if s.kind == "CRx"]
        reversed_slots = slots[: idx[0]] + [slots[i] for i in idx[::-1]] + slots[idx[-1] + 1 :]
        psi = random_state(rng, 3)
        a = run(BoundCircuit(t, params), Statevector(3, psi.copy())).amplitudes
        b = run(BoundCircuit(custom_template(3, reversed_slots), params), Statevector(3, psi.copy())).amplitudes
        assert np.max(np.abs(a - b)) > 1e-3
