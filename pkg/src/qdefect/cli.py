"""Command-line entry point: generate, train, eval, analyze, gradcheck.

Every failure prints a single ``ERROR: <message>`` line on stderr and exits
with a nonzero status. Output files are written to a temp file first and then
renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields

import numpy as np

from . import analysis, data, hybrid
from .circuits import KINDS, BoundCircuit, build_template, run
from .encoders import EncodingSpec, angle_encode
from .gradients import finite_diff, input_angle_grad, param_shift
from .qstate import expectation_z, zero_state

GRADCHECK_TOL = 1e-5
METRICS_HEADER = ("epoch", "loss", "train_acc", "test_acc")


class CLIError(Exception):
    pass


# --- run configuration ---------------------------------------------------------

_MODEL_KEYS = {f.name: f for f in fields(hybrid.ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in fields(hybrid.TrainConfig)}
_EXTRA_KEYS = {"test_fraction": float, "split_seed": int, "model_seed": int, "data": str,
               "out_model": str, "metrics": str}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _convert(key: str, text: str):
    if key in _EXTRA_KEYS:
        return _EXTRA_KEYS[key](text)
    if key == "augment":
        return tuple(s.strip() for s in text.split(",") if s.strip())
    default = (_MODEL_KEYS.get(key) or _TRAIN_KEYS[key]).default
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_run_config(text: str) -> dict:
    """``key = value`` lines with ``#`` comments; unknown or repeated keys are errors."""
    known = (set(_MODEL_KEYS) | set(_TRAIN_KEYS) | set(_EXTRA_KEYS)) - {"seed"}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            key = "train_seed"
        if key not in known and key != "train_seed":
            raise CLIError(f"config line {lineno}: unknown key {key!r}")
        if key in out:
            raise CLIError(f"config line {lineno}: duplicate key {key!r}")
        try:
            out[key] = int(value) if key == "train_seed" else _convert(key, value)
        except ValueError as exc:
            raise CLIError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return out


def read_run_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_run_config(fh.read())
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc.strerror}") from exc


def model_config(cfg: dict, **overrides) -> hybrid.ModelConfig:
    kw = {k: v for k, v in cfg.items() if k in _MODEL_KEYS}
    if "model_seed" in cfg:
        kw["seed"] = cfg["model_seed"]
    kw.update(overrides)
    return hybrid.ModelConfig(**kw)


def train_config(cfg: dict) -> hybrid.TrainConfig:
    kw = {k: v for k, v in cfg.items() if k in _TRAIN_KEYS and k != "seed"}
    if "train_seed" in cfg:
        kw["seed"] = cfg["train_seed"]
    return hybrid.TrainConfig(**kw)


# --- commands ----------------------------------------------------------------------


def _parse_size(text: str) -> tuple[int, int]:
    try:
        if "x" in text.lower():
            h, w = text.lower().split("x")
            return int(h), int(w)
        return int(text), int(text)
    except ValueError as exc:
        raise CLIError(f"bad --size {text!r}; use N or HxW") from exc


def cmd_generate(args) -> int:
    patterns = [p.strip() for p in args.pattern_mix.split(",") if p.strip()]
    if len(set(patterns)) != len(patterns):
        raise CLIError("--pattern-mix lists a pattern twice")
    h, w = _parse_size(args.size)
    ds = data.generate_dataset(patterns, args.count, h, w, args.noise, args.seed)
    data.write_dataset(ds, args.out)
    for name, count in ds.class_counts().items():
        print(f"{name}: {count}")
    return 0


def _load_data(path) -> data.WaferDataset:
    try:
        return data.read_dataset(path)
    except OSError as exc:
        raise CLIError(f"cannot read dataset {path}: {exc.strerror}") from exc


def _metrics_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for m in history:
        test = "" if m.test_acc is None else repr(m.test_acc)
        writer.writerow([m.epoch, repr(m.loss), repr(m.train_acc), test])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = read_run_config(args.config)
    data_path = args.data or cfg.get("data")
    out_model = args.out_model or cfg.get("out_model")
    metrics = args.metrics or cfg.get("metrics")
    if not (data_path and out_model and metrics):
        raise CLIError("train needs --data, --out-model and --metrics (flags or config keys)")
    ds = _load_data(data_path)
    h, w = ds.shape
    for key, actual in (("height", h), ("width", w), ("n_classes", ds.n_classes)):
        if key in cfg and cfg[key] != actual:
            raise CLIError(f"config {key}={cfg[key]} does not match the dataset ({actual})")
    mcfg = model_config(cfg, height=h, width=w, n_classes=ds.n_classes)
    tcfg = train_config(cfg)
    fraction = cfg.get("test_fraction", 0.2)
    train_set, test_set = data.split(ds, fraction, cfg.get("split_seed", 0))
    model = hybrid.HybridModel(mcfg)

    def report(m):
        test = "-" if m.test_acc is None else f"{m.test_acc:.4f}"
        print(f"epoch {m.epoch}: loss {m.loss:.6f} train_acc {m.train_acc:.4f} test_acc {test}")

    record = hybrid.train(model, train_set, tcfg, test_set, on_epoch=report)
    hybrid.save_model(model, out_model)
    data.atomic_write(metrics, _metrics_csv(record.history))
    return 0


def confusion_matrix(labels, predicted, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=int)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return cm


def cmd_eval(args) -> int:
    try:
        model = hybrid.load_model(args.model)
    except OSError as exc:
        raise CLIError(f"cannot read model {args.model}: {exc.strerror}") from exc
    ds = _load_data(args.data)
    if len(ds) == 0:
        raise CLIError("dataset is empty")
    mc = model.config
    if ds.shape != (mc.height, mc.width) or ds.n_classes != mc.n_classes:
        raise CLIError(
            f"model expects {mc.height}x{mc.width} grids with {mc.n_classes} classes, "
            f"dataset has {ds.shape[0]}x{ds.shape[1]} with {ds.n_classes}"
        )
    pred = hybrid.predict(model, ds)
    acc = float(np.mean(pred == ds.labels))
    print(f"accuracy {acc:.4f} ({int(np.sum(pred == ds.labels))}/{len(ds)})")
    cm = confusion_matrix(ds.labels, pred, ds.n_classes)
    width = max(len(n) for n in ds.class_names)
    print("confusion (rows true, columns predicted)")
    print(" " * width + " " + " ".join(f"{n:>{width}}" for n in ds.class_names))
    for name, row in zip(ds.class_names, cm):
        print(f"{name:>{width}} " + " ".join(f"{v:>{width}d}" for v in row))
    return 0


def cmd_analyze(args) -> int:
    template = build_template(args.circuit, args.qubits, args.layers)
    expr = analysis.expressibility(template, args.samples, args.bins, args.seed)
    ent = analysis.entangling_capability(template, args.samples, args.seed)
    data.atomic_write(args.out, analysis.reports_json(expr, ent))
    print(f"{template.kind}: KL {expr.kl_divergence:.6g}  mean Q {ent.mean_q:.6g}")
    return 0


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def gradient_checks(cfg: dict, n_draws: int = 3) -> list[tuple[str, float]]:
    """(name, deviation) for the circuit, encoder-input and end-to-end oracles."""
    seed = cfg.get("train_seed", 0)
    rng = np.random.default_rng(seed)
    mcfg = model_config(cfg)
    template = build_template(mcfg.template, mcfg.n_qubits, mcfg.n_layers)
    n = template.n_qubits
    spec = EncodingSpec("angle", n, mcfg.axis)
    results = []

    worst_ps = worst_in = 0.0
    for _ in range(n_draws):
        circuit = BoundCircuit(template, rng.uniform(0, 2 * np.pi, template.param_count))
        # inside (-1, 1) so the central-difference stencil stays in the encoder's domain
        x = rng.uniform(-0.9, 0.9, n)
        state = zero_state(n)
        for q in range(n):
            worst_ps = max(worst_ps, float(np.max(np.abs(
                param_shift(circuit, state, q) - finite_diff(circuit, state, q)))))
            analytic = input_angle_grad(circuit, x, q, spec)
            fd = np.zeros(n)
            for k in range(n):
                e = np.zeros(n)
                e[k] = 1e-5
                fd[k] = (_encoded_z(circuit, x + e, q, spec) - _encoded_z(circuit, x - e, q, spec)) / 2e-5
            worst_in = max(worst_in, float(np.max(np.abs(analytic - fd))))
    results.append(("parameter-shift vs finite difference (max abs)", worst_ps))
    results.append(("input-angle gradient vs finite difference (max abs)", worst_in))

    model = hybrid.HybridModel(mcfg)
    for v in model.parameters().values():
        v[...] += rng.normal(0, 0.1, v.shape)
    grids, labels = hybrid.kink_free_batch(model, rng, 2)
    _, grads = model.loss_and_grads(grids, labels)
    fd = hybrid.finite_difference_grads(model, grids, labels)
    for group, names in model.param_groups().items():
        if not names:
            continue
        a = np.concatenate([grads[k].ravel() for k in names])
        b = np.concatenate([fd[k].ravel() for k in names])
        results.append((f"end-to-end {group} (relative)", _relative(a, b)))
    return results


def _encoded_z(circuit, x, q, spec):
    return expectation_z(run(circuit, angle_encode(x, spec)), q)


def cmd_gradcheck(args) -> int:
    cfg = read_run_config(args.config)
    failed = False
    for name, dev in gradient_checks(cfg):
        status = "ok" if dev <= GRADCHECK_TOL else "FAIL"
        failed |= dev > GRADCHECK_TOL
        print(f"{status:4s} {dev:.3e}  {name}")
    if failed:
        print(f"ERROR: gradient deviation above {GRADCHECK_TOL:g}", file=sys.stderr)
        return 1
    return 0


# --- argument parsing ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"ERROR: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qdefect", description="Hybrid classical-quantum wafer-defect classifier.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic WDM1 dataset")
    g.add_argument("--pattern-mix", default=",".join(data.CLASS_NAMES),
                   help="comma-separated pattern names, cycled over the samples")
    g.add_argument("--count", type=int, default=500)
    g.add_argument("--size", default="26", help="N or HxW")
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint and metrics CSV")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out-model")
    t.add_argument("--metrics")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="expressibility and entangling capability as JSON")
    a.add_argument("--circuit", choices=KINDS, default="c5")
    a.add_argument("--qubits", type=int, default=4)
    a.add_argument("--layers", type=int, default=None)
    a.add_argument("--samples", type=int, default=analysis.DEFAULT_SAMPLES)
    a.add_argument("--bins", type=int, default=analysis.DEFAULT_BINS)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("gradcheck", help="run the gradient oracles for a configuration")
    c.add_argument("--config")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"ERROR: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
