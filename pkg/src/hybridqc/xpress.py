"""Expressibility of a parameterized circuit.

Pairs of states are drawn with independent uniform ``[0, 2pi)`` weights and
their fidelities ``F = |<psi1|psi2>|^2`` are histogrammed on ``bins`` equal
bins of ``[0, 1]``. Expressibility is the natural-log KL divergence from that
histogram to the Haar-random fidelity law ``P(F) = (N-1)(1-F)^(N-2)``,
``N = 2**n_qubits``. Lower values mean the circuit covers state space more
uniformly.

Bins are half-open ``[lo, hi)`` except the last, which is closed at 1, so
every bin carries positive Haar mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import qsim
from .exceptions import ConfigurationError
from .qsim import CircuitProgram
from .vqc import CircuitTemplate, expand_template, squash

DEFAULT_SAMPLES = 5000
DEFAULT_BINS = 75
_CHUNK = 2048


@dataclass(frozen=True)
class FidelityHistogram:
    counts: np.ndarray
    edges: np.ndarray
    samples: int

    @property
    def bins(self) -> int:
        return len(self.counts)

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.samples


@dataclass(frozen=True)
class ExpressibilityResult:
    template_id: int | None
    n_qubits: int
    kl: float
    samples: int
    bins: int
    seed: int
    stderr: float


def _program(circuit) -> tuple[CircuitProgram, int | None]:
    if isinstance(circuit, CircuitTemplate):
        return expand_template(circuit), circuit.template_id
    if isinstance(circuit, CircuitProgram):
        return circuit, None
    raise ConfigurationError(f"expected a CircuitTemplate or CircuitProgram, got {type(circuit).__name__}")


def _states(program: CircuitProgram, weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    out = np.empty((len(weights), 2 ** program.n_qubits), dtype=complex)
    for start in range(0, len(weights), _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = qsim.simulate(program, features[sl], weights[sl])
    return out


def sample_fidelities(circuit, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                      bins: int = DEFAULT_BINS, sample_features: bool = False) -> FidelityHistogram:
    """Histogram of pairwise fidelities under random weights.

    Features are held at 0 unless ``sample_features`` is set, in which case
    each state also gets standard-normal raw features (squashed as in the
    quantum layer).
    """
    if samples < 1 or bins < 1:
        raise ConfigurationError(f"need samples >= 1 and bins >= 1, got {samples}, {bins}")
    program, _ = _program(circuit)
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 2 * np.pi, size=(2, samples, program.n_weights))
    if sample_features:
        f = squash(rng.standard_normal(size=(2, samples, program.n_features)))
    else:
        f = np.zeros((2, samples, program.n_features))
    a = _states(program, w[0], f[0])
    b = _states(program, w[1], f[1])
    fid = np.abs(np.einsum("sd,sd->s", np.conj(a), b)) ** 2
    fid = np.clip(fid, 0.0, 1.0)
    idx = np.minimum((fid * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return FidelityHistogram(counts, np.linspace(0.0, 1.0, bins + 1), samples)


def haar_bin_mass(bin_index: int, n_qubits: int, bins: int = DEFAULT_BINS) -> float:
    """Exact Haar probability of fidelity landing in bin ``bin_index``."""
    if not 0 <= bin_index < bins:
        raise ConfigurationError(f"bin {bin_index} outside 0..{bins - 1}")
    e = 2 ** n_qubits - 1
    lo, hi = bin_index / bins, (bin_index + 1) / bins
    return (1.0 - lo) ** e - (1.0 - hi) ** e


def haar_masses(n_qubits: int, bins: int = DEFAULT_BINS) -> np.ndarray:
    return np.array([haar_bin_mass(b, n_qubits, bins) for b in range(bins)])


def haar_log_masses(n_qubits: int, bins: int = DEFAULT_BINS) -> np.ndarray:
    """``log`` of :func:`haar_masses` without underflow.

    At 8 qubits the last bin's mass ``(1/B)**255`` is below the smallest
    double, so the KL is evaluated from these logs instead.
    """
    e = 2 ** n_qubits - 1
    lo = np.arange(bins) / bins
    hi = np.arange(1, bins + 1) / bins
    with np.errstate(divide="ignore"):
        log_hi = e * np.log1p(-hi)          # -inf on the last bin
    log_lo = e * np.log1p(-lo)
    return log_lo + np.log1p(-np.exp(log_hi - log_lo))


def kl_divergence(p: np.ndarray, q: np.ndarray | None = None, log_q: np.ndarray | None = None) -> float:
    """sum p log(p/q) over bins with p > 0; pass ``log_q`` for tiny masses."""
    p = np.asarray(p, float)
    log_q = np.log(np.asarray(q, float)) if log_q is None else np.asarray(log_q, float)
    m = p > 0
    return float(np.sum(p[m] * (np.log(p[m]) - log_q[m])))


def kl_standard_error(counts: np.ndarray, q: np.ndarray | None = None, log_q: np.ndarray | None = None) -> float:
    """Delta-method standard error of the plug-in KL under multinomial sampling."""
    counts = np.asarray(counts, float)
    log_q = np.log(np.asarray(q, float)) if log_q is None else np.asarray(log_q, float)
    S = counts.sum()
    p = counts / S
    m = p > 0
    t = np.log(p[m]) - log_q[m]
    var = (np.sum(p[m] * t ** 2) - np.sum(p[m] * t) ** 2) / S
    return math.sqrt(max(var, 0.0))


def expressibility(circuit, samples: int = DEFAULT_SAMPLES, bins: int = DEFAULT_BINS,
                   seed: int = 0, sample_features: bool = False) -> ExpressibilityResult:
    """KL(sampled fidelity histogram || Haar) for a template or program."""
    if samples < 1000:
        raise ConfigurationError(f"expressibility needs at least 1000 samples, got {samples}")
    if bins < 10:
        raise ConfigurationError(f"expressibility needs at least 10 bins, got {bins}")
    program, tid = _program(circuit)
    hist = sample_fidelities(program, samples, seed, bins, sample_features)
    log_q = haar_log_masses(program.n_qubits, bins)
    return ExpressibilityResult(
        template_id=tid,
        n_qubits=program.n_qubits,
        kl=kl_divergence(hist.probabilities, log_q=log_q),
        samples=samples,
        bins=bins,
        seed=seed,
        stderr=kl_standard_error(hist.counts, log_q=log_q),
    )
