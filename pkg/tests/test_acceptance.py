"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""

import time

import numpy as np
import pytest

from qdefect import analysis, data
from qdefect.circuits import KINDS, BoundCircuit, build_template, custom_template, expected_param_count, run
from qdefect.encoders import EncodingSpec, angle_encode, basis_encode
from qdefect.gradients import finite_diff, param_shift
from qdefect.hybrid import HybridModel, ModelConfig, TrainConfig, finite_difference_grads, kink_free_batch, train
from qdefect.qstate import Gate, Statevector, apply_gate, expectation_z

from conftest import ACCEPTANCE_LINES, random_state

SEEDS = (0, 1, 2, 3, 4)
LEARNING_CLASSES = ("Center", "Edge", "Scratch", "Ring")
LEARNING_TRAIN = TrainConfig(epochs=30, batch_size=32, lr=1e-2, optimizer="adam")


def report(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def learning_run(seed, quantum, tmp_dir):
    """Generate, store and reload the 4-class set, split 400/100, train the default topology."""
    ds = data.generate_dataset(LEARNING_CLASSES, 500, 26, 26, 0.05, seed)
    path = tmp_dir / f"wafers-{seed}.wdm"
    data.write_dataset(ds, path)
    train_set, test_set = data.split(data.read_dataset(path), 0.2, seed)
    assert (len(train_set), len(test_set)) == (400, 100)
    model = HybridModel(ModelConfig(n_classes=4, quantum=quantum, seed=seed))
    cfg = TrainConfig(**{**LEARNING_TRAIN.__dict__, "seed": seed})
    return train(model, train_set, cfg, test_set)


@pytest.fixture(scope="module")
def learning_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("learning")
    cache = {}

    def get(seed, quantum):
        if (seed, quantum) not in cache:
            cache[seed, quantum] = learning_run(seed, quantum, tmp)
        return cache[seed, quantum]

    return get


def test_simulator_exactness():
    rng = np.random.default_rng(2024)
    one_q = ["Rx", "Ry", "Rz", "H", "X"]
    two_q = ["CNOT", "CRx", "CRy", "CRz"]
    worst_norm = worst_inv = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        kinds = one_q + (two_q if n > 1 else [])
        gates = []
        for _ in range(int(rng.integers(1, 41))):
            kind = kinds[rng.integers(len(kinds))]
            if kind in two_q:
                wires = tuple(int(v) for v in rng.choice(n, 2, replace=False))
            else:
                wires = (int(rng.integers(n)),)
            angle = float(rng.uniform(-2 * np.pi, 2 * np.pi)) if "R" in kind else None
            gates.append(Gate(kind, wires, angle))
        psi = random_state(rng, n)
        s = Statevector(n, psi.copy())
        for g in gates:
            apply_gate(s, g)
        worst_norm = max(worst_norm, abs(s.norm() - 1))
        for g in reversed(gates):
            apply_gate(s, g.inverse())
        worst_inv = max(worst_inv, float(np.max(np.abs(s.amplitudes - psi))))
    seconds = time.perf_counter() - t0
    ok = worst_norm <= 1e-12 and worst_inv <= 1e-12 and seconds < 10
    report(1, "simulator exactness", ok,
           f"max |norm-1| {worst_norm:.2e}, max inverse error {worst_inv:.2e}, {seconds:.2f} s")


def test_encoder_correctness():
    basis_ok = (np.array_equal(basis_encode("01").amplitudes, [0, 1, 0, 0])
                and np.array_equal(basis_encode("11").amplitudes, [0, 0, 0, 1]))
    spec = EncodingSpec("angle", 1)
    worst = max(abs(expectation_z(angle_encode([x], spec), 0) - np.cos((x + 1) * np.pi / 2))
                for x in np.linspace(-1, 1, 101))
    report(2, "encoder correctness", basis_ok and worst <= 1e-12,
           f"basis examples exact: {basis_ok}, max cos-law error {worst:.2e} over 101 points")


def test_gradient_fidelity():
    rng = np.random.default_rng(7)
    worst = 0.0
    t0 = time.perf_counter()
    for kind in KINDS:
        t = build_template(kind, 4, 2)
        for _ in range(20):
            circuit = BoundCircuit(t, rng.uniform(0, 2 * np.pi, t.param_count))
            state = angle_encode(rng.uniform(-1, 1, 4), EncodingSpec("angle", 4))
            for q in range(4):
                diff = param_shift(circuit, state, q) - finite_diff(circuit, state, q, h=1e-4)
                worst = max(worst, float(np.max(np.abs(diff))))
    seconds = time.perf_counter() - t0
    report(3, "gradient fidelity", worst <= 1e-6 and seconds < 120,
           f"max |shift - FD| {worst:.2e} over {len(KINDS)} templates x 20 draws x 4 observables, {seconds:.1f} s")


def test_end_to_end_differentiability():
    cfg = ModelConfig(height=6, width=6, n_classes=3, stem_channels=4, spa_s=2, spa_t=2, n_qubits=2,
                      template="c16", n_layers=2)
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    model = HybridModel(cfg)
    for v in model.parameters().values():
        v[...] += rng.normal(0, 0.1, v.shape)
    grids, labels = kink_free_batch(model, rng, 4)
    _, grads = model.loss_and_grads(grids, labels)
    fd = finite_difference_grads(model, grids, labels, h=1e-5)
    a = np.concatenate([grads[k].ravel() for k in fd])
    b = np.concatenate([fd[k].ravel() for k in fd])
    rel = float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b)))
    seconds = time.perf_counter() - t0
    report(4, "end-to-end differentiability", rel <= 1e-5 and seconds < 60,
           f"relative error {rel:.2e} over {a.size} parameters, {seconds:.1f} s")


def test_circuit_zoo_structure():
    formulas = {
        "basic": lambda n, m: n * m,
        "c5": lambda n, m: (4 * n + n * (n - 1)) * m,
        "c6": lambda n, m: (4 * n + n * (n - 1)) * m,
        "c16": lambda n, m: (2 * n + n - 1) * m,
        "c17": lambda n, m: (2 * n + n - 1) * m,
    }
    bad = []
    for kind, f in formulas.items():
        for n in range(2, 9):
            for m in range(1, 5):
                count = build_template(kind, n, m).param_count
                if count != f(n, m) or count != expected_param_count(kind, n, m):
                    bad.append((kind, n, m, count))
    four_by_three = build_template("basic", 4, 3).param_count
    report(5, "circuit-zoo structure", not bad and four_by_three == 12,
           f"{5 * 7 * 4} (template, n, layers) cases checked, mismatches {bad or 'none'}, basic 4x3 = {four_by_three}")


def test_expressibility_and_entanglement_ordering():
    kl_wins = q_wins = 0
    details = []
    for seed in SEEDS:
        kl = {k: analysis.expressibility(build_template(k, 4, 4), 5000, 75, seed).kl_divergence
              for k in ("c5", "basic")}
        q = {k: analysis.entangling_capability(build_template(k, 4, 4), 5000, seed).mean_q for k in ("c5", "c16")}
        kl_wins += kl["c5"] < kl["basic"]
        q_wins += q["c5"] >= q["c16"]
        details.append(f"s{seed}: KL c5 {kl['c5']:.4f} basic {kl['basic']:.4f}, Q c5 {q['c5']:.3f} c16 {q['c16']:.3f}")

    rng = np.random.default_rng(5)
    worst = 0.0
    for kind in ("c5", "c16"):
        t = build_template(kind, 4, 4)
        params = rng.uniform(0, 2 * np.pi, t.param_count)
        psi = random_state(rng, 4)
        ref = run(BoundCircuit(t, params), Statevector(4, psi.copy())).amplitudes
        slots = list(t.slots)
        for _ in range(10):
            # shuffle every contiguous CRz block independently
            out_slots, i = [], 0
            while i < len(slots):
                j = i
                while j < len(slots) and slots[j].kind == "CRz":
                    j += 1
                if j > i:
                    block = slots[i:j]
                    out_slots += [block[k] for k in rng.permutation(len(block))]
                    i = j
                else:
                    out_slots.append(slots[i])
                    i += 1
            out = run(BoundCircuit(custom_template(4, out_slots), params), Statevector(4, psi.copy())).amplitudes
            worst = max(worst, float(np.max(np.abs(out - ref))))
    ok = kl_wins >= 4 and q_wins >= 4 and worst <= 1e-12
    report(6, "expressibility / entanglement ordering", ok,
           f"KL(c5)<KL(basic) in {kl_wins}/5 seeds, Q(c5)>=Q(c16) in {q_wins}/5 seeds, "
           f"CRz permutation error {worst:.1e}; " + "; ".join(details))


def test_desk_scale_learning(learning_runs):
    rec = learning_runs(0, True)
    best = max(m.test_acc for m in rec.history)
    first = next((m.epoch for m in rec.history if m.test_acc >= 0.9), None)
    report(7, "desk-scale learning", best >= 0.9 and rec.seconds < 600,
           f"best test accuracy {best:.3f} (first >= 0.90 at epoch {first}), training {rec.seconds:.0f} s")


def test_hybrid_vs_classical_direction(learning_runs):
    hybrid_acc = [learning_runs(s, True).final.test_acc for s in SEEDS]
    classical_acc = [learning_runs(s, False).final.test_acc for s in SEEDS]
    mh, mc = float(np.median(hybrid_acc)), float(np.median(classical_acc))
    report(8, "hybrid vs classical direction", mh >= mc,
           f"median final test accuracy hybrid {mh:.3f} {hybrid_acc} vs classical {mc:.3f} {classical_acc}")
