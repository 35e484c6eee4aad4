import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridqc.exceptions import ConfigurationError
from hybridqc.qsim import CircuitProgram, GateOp, Param
from hybridqc.vqc import CircuitTemplate, registry
from hybridqc.xpress import (expressibility, haar_bin_mass, haar_log_masses, haar_masses, kl_divergence,
                             kl_standard_error, sample_fidelities)


def test_haar_masses_single_qubit_uniform():
    assert np.allclose(haar_masses(1, 75), 1 / 75, atol=1e-15)


def test_haar_mass_two_qubits_half_interval():
    assert haar_bin_mass(0, 2, bins=2) == 1 - 0.5 ** 3 == 0.875


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 300))
def test_haar_masses_sum_to_one(n, bins):
    q = haar_masses(n, bins)
    assert math.isclose(q.sum(), 1.0, rel_tol=0, abs_tol=1e-12)
    log_q = haar_log_masses(n, bins)
    assert np.all(np.isfinite(log_q))
    big = q > 1e-300
    assert np.allclose(np.exp(log_q[big]), q[big], rtol=1e-9, atol=0)


def test_idle_eight_qubit_circuit_has_finite_kl():
    res = expressibility(CircuitTemplate(8, 1, "RX-only", "ladder-CZ", "RZ"), 1000, 75)
    assert res.kl == pytest.approx(255 * math.log(75), rel=1e-12)


def test_haar_mass_matches_numeric_integral():
    from numpy.polynomial.legendre import leggauss
    x, wts = leggauss(40)
    N = 2 ** 3
    for b in (0, 10, 74):
        lo, hi = b / 75, (b + 1) / 75
        t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        integral = 0.5 * (hi - lo) * np.sum(wts * (N - 1) * (1 - t) ** (N - 2))
        assert haar_bin_mass(b, 3) == pytest.approx(integral, rel=1e-12)


def test_bad_bin_index():
    with pytest.raises(ConfigurationError):
        haar_bin_mass(75, 1, 75)


def _rz_only():
    return CircuitProgram(1, (GateOp("RZ", 0, None, (Param.weight(0),)),), ((0, "Z"),))


def _u3_only():
    return CircuitProgram(1, (GateOp("U3", 0, None, (Param.weight(0), Param.weight(1), Param.weight(2))),), ((0, "Z"),))


def test_parameter_independent_state_fills_last_bin():
    hist = sample_fidelities(_rz_only(), samples=2000, seed=0)
    assert hist.counts[-1] == 2000 and hist.counts.sum() == 2000
    res = expressibility(_rz_only(), 5000, 75, seed=0)
    assert abs(res.kl - math.log(75)) < 1e-9


def test_idle_template_kl_is_log_bins():
    t = CircuitTemplate(1, 1, "RX-only", "ring-CNOT", "RZ")
    assert abs(expressibility(t, 5000, 75).kl - math.log(75)) < 1e-9


def test_single_qubit_u3_is_close_to_haar():
    assert expressibility(_u3_only(), 5000, 75).kl < 0.1


def test_stacked_u3_passes_uniformity_chi_square():
    # uniform angles on one U3 over-weight the poles; three stacked U3 gates
    # are statistically indistinguishable from Haar at this sample size
    gates = tuple(GateOp("U3", 0, None, tuple(Param.weight(3 * j + i) for i in range(3))) for j in range(3))
    prog = CircuitProgram(1, gates, ((0, "Z"),))
    hist = sample_fidelities(prog, samples=5000, seed=0, bins=20)
    expected = 5000 / 20
    chi2 = float(np.sum((hist.counts - expected) ** 2 / expected))
    assert chi2 < 43.82  # 0.999 quantile, 19 degrees of freedom


def test_kl_properties():
    q = haar_masses(2, 10)
    assert kl_divergence(q, q) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.dirichlet(np.ones(10))
        assert kl_divergence(p, q) >= 0


def test_seeded_reproducible_and_stderr():
    a = expressibility(registry(1), 2000, 75, seed=3)
    b = expressibility(registry(1), 2000, 75, seed=3)
    assert a == b
    assert a.stderr > 0 and a.template_id == 1 and a.n_qubits == 4


def test_ring_family_depth_ordering():
    kl = {}
    for d in (0, 1, 3):
        r = expressibility(CircuitTemplate(4, d, "H-then-RY", "ring-CNOT", "RY"), 5000, 75, seed=0)
        kl[d] = r
    assert kl[3].kl < kl[1].kl < kl[0].kl
    assert kl[1].kl - kl[3].kl > 2 * math.hypot(kl[1].stderr, kl[3].stderr)


def test_doubling_samples_is_stable():
    a = expressibility(registry(2), 5000, 75, seed=0)
    b = expressibility(registry(2), 10000, 75, seed=1)
    assert abs(a.kl - b.kl) < 3 * math.hypot(a.stderr, b.stderr)


def test_sampled_features_flag_changes_result():
    a = expressibility(registry(1), 2000, 75, seed=0)
    b = expressibility(registry(1), 2000, 75, seed=0, sample_features=True)
    assert a.kl != b.kl


def test_argument_validation():
    with pytest.raises(ConfigurationError):
        expressibility(registry(1), 999)
    with pytest.raises(ConfigurationError):
        expressibility(registry(1), 1000, 9)
    with pytest.raises(ConfigurationError):
        expressibility("not a circuit", 1000)


def test_standard_error_zero_for_point_mass():
    counts = np.zeros(10)
    counts[-1] = 100
    assert kl_standard_error(counts, haar_masses(1, 10)) == 0.0
