"""Expressibility and entangling capability of circuit templates.

Expressibility: draw pairs of uniform parameter vectors in [0, 2pi), run the
template on |0...0>, histogram the pair fidelities over [0, 1] and take the KL
divergence from the Haar fidelity distribution P(F) = (D-1)(1-F)^(D-2),
integrated exactly per bin. Empty histogram bins are floored at 1e-9
probability (then renormalized) so the divergence stays finite.

Entangling capability: mean Meyer-Wallach Q = 2(1 - mean_k Tr rho_k^2) over
random parameter draws.

Draw i of a stream uses ``SeedSequence(seed, spawn_key=(stream, i))``, so the
result does not depend on how draws are chunked.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import qstate
from .circuits import CircuitTemplate, run_batch

EMPTY_BIN_FLOOR = 1e-9
DEFAULT_SAMPLES = 5000
DEFAULT_BINS = 75
MIN_SAMPLES = 1000
MIN_BINS = 10
CHUNK = 500


@dataclass
class ExpressibilityReport:
    template: str
    n_qubits: int
    n_layers: int
    n_samples: int
    n_bins: int
    kl_divergence: float
    histogram: list
    empty_bin_floor: float = EMPTY_BIN_FLOOR


@dataclass
class EntanglementReport:
    template: str
    n_samples: int
    mean_q: float
    std_q: float


def haar_bin_masses(n_qubits: int, n_bins: int) -> np.ndarray:
    """Probability mass of the Haar fidelity law in each of ``n_bins`` equal bins."""
    d = 2**n_qubits
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    tail = (1.0 - edges) ** (d - 1)
    return tail[:-1] - tail[1:]


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) over bins with p > 0; clamped at 0 against rounding."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def _uniform_params(template: CircuitTemplate, n: int, seed: int, stream: int) -> np.ndarray:
    """Row i comes from its own counter-derived stream."""
    out = np.empty((n, template.param_count))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, i)))
        out[i] = rng.uniform(0.0, 2 * np.pi, template.param_count)
    return out


def _output_states(template: CircuitTemplate, params: np.ndarray) -> np.ndarray:
    n = template.n_qubits
    out = np.empty((params.shape[0], 2**n), dtype=complex)
    for start in range(0, params.shape[0], CHUNK):
        block = params[start : start + CHUNK]
        init = np.zeros((block.shape[0], 2**n), dtype=complex)
        init[:, 0] = 1.0
        out[start : start + CHUNK] = run_batch(template, block[:, template.slot_params], init)
    return out


def _check_template(template: CircuitTemplate) -> None:
    if template.param_count == 0:
        raise ValueError("template has no parameters; its output distribution is a single state")


def pair_fidelities(template: CircuitTemplate, n_samples: int, seed: int) -> np.ndarray:
    _check_template(template)
    a = _output_states(template, _uniform_params(template, n_samples, seed, 0))
    b = _output_states(template, _uniform_params(template, n_samples, seed, 1))
    overlap = np.sum(a.conj() * b, axis=1)
    return np.clip(overlap.real**2 + overlap.imag**2, 0.0, 1.0)


def expressibility(
    template: CircuitTemplate,
    n_samples: int = DEFAULT_SAMPLES,
    n_bins: int = DEFAULT_BINS,
    seed: int = 0,
) -> ExpressibilityReport:
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_SAMPLES}")
    if n_bins < MIN_BINS:
        raise ValueError(f"n_bins must be >= {MIN_BINS}")
    fid = pair_fidelities(template, n_samples, seed)
    hist, _ = np.histogram(fid, bins=n_bins, range=(0.0, 1.0))
    p = np.maximum(hist / n_samples, EMPTY_BIN_FLOOR)
    p /= p.sum()
    q = haar_bin_masses(template.n_qubits, n_bins)
    q = np.maximum(q, np.finfo(float).tiny)
    return ExpressibilityReport(
        template=template.kind,
        n_qubits=template.n_qubits,
        n_layers=template.n_layers,
        n_samples=n_samples,
        n_bins=n_bins,
        kl_divergence=kl_divergence(p, q),
        histogram=[int(v) for v in hist],
    )


def meyer_wallach(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """Q per state for a ``(B, 2**n)`` stack."""
    purities = qstate.reduced_purities(states, n_qubits)
    return np.clip(2.0 * (1.0 - purities.mean(axis=1)), 0.0, 1.0)


def entangling_capability(
    template: CircuitTemplate, n_samples: int = DEFAULT_SAMPLES, seed: int = 0
) -> EntanglementReport:
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_SAMPLES}")
    if template.param_count == 0:
        states = _output_states(template, np.zeros((1, 0)))
        q = np.repeat(meyer_wallach(states, template.n_qubits), n_samples)
    else:
        states = _output_states(template, _uniform_params(template, n_samples, seed, 2))
        q = meyer_wallach(states, template.n_qubits)
    return EntanglementReport(
        template=template.kind,
        n_samples=n_samples,
        mean_q=float(q.mean()),
        std_q=float(q.std()),
    )


def reports_json(expr: ExpressibilityReport, ent: EntanglementReport) -> str:
    return json.dumps({"expressibility": asdict(expr), "entanglement": asdict(ent)}, indent=2) + "\n"
