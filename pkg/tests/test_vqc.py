import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridqc import qsim, vqc
from hybridqc.diffcore import Tape, Tensor, backward
from hybridqc.diffcore import sum_, mul
from hybridqc.exceptions import ConfigurationError, DimensionError
from hybridqc.qsim import CircuitProgram, GateOp
from hybridqc.vqc import CircuitTemplate, QnnLayer, expand_template, qnn_forward, registry
from hybridqc.xpress import expressibility


def test_registry_qubit_counts():
    assert [registry(i).n_qubits for i in range(1, 7)] == [4, 5, 5, 5, 7, 4]
    for i in range(1, 7):
        assert registry(i).template_id == i
    for bad in (0, 7, "x", None):
        with pytest.raises(ConfigurationError):
            registry(bad)


def test_structural_count_ring_cnot():
    prog = expand_template(CircuitTemplate(4, 1, "H-then-RY", "ring-CNOT", "RY"))
    kinds = Counter(g.kind for g in prog.gates)
    assert kinds == {"H": 4, "RY": 8, "CNOT": 4}
    roles = Counter(g.params[0].role for g in prog.gates if g.kind == "RY")
    assert roles == {"feature": 4, "weight": 4}
    assert prog.measurements == tuple((q, "Z") for q in range(4))


def test_depth_zero_is_embedding_only():
    t = CircuitTemplate(3, 0)
    prog = expand_template(t)
    assert t.n_weights == 0 and prog.n_weights == 0
    assert [g.kind for g in prog.gates] == ["H"] * 3 + ["RY"] * 3


@pytest.mark.parametrize("tid", range(1, 7))
def test_weight_count_matches_program(tid):
    t = registry(tid)
    prog = expand_template(t)
    k = vqc.ROTATIONS[t.rotation]
    assert t.n_weights == t.depth * t.n_qubits * k == prog.n_weights
    assert prog.n_features == t.n_qubits


def test_weight_count_mismatch_names_expected():
    with pytest.raises(DimensionError, match="4 weights"):
        expand_template(registry(1), np.zeros(5))
    with pytest.raises(DimensionError):
        vqc.embed_features(registry(1), np.zeros(3))


def test_embedding_zero_features_gives_plus_states():
    prog = CircuitProgram(4, tuple(vqc.embed_features(registry(1))), tuple((q, "Z") for q in range(4)))
    assert np.allclose(qsim.run_circuit(prog, np.zeros(4)), 0, atol=1e-15)
    xs = qsim.run_circuit(CircuitProgram(4, prog.gates, tuple((q, "X") for q in range(4))), np.zeros(4))
    assert np.allclose(xs, 1)


def test_squash_saturates():
    assert vqc.squash(1e6) == pytest.approx(math.pi / 2, abs=1e-15)
    assert vqc.squash(-np.inf) == -math.pi / 2


def test_embedding_separates_generic_inputs():
    t = CircuitTemplate(3, 0)
    prog = expand_template(t)
    grid = np.linspace(-2, 2, 7)
    pts = np.array(np.meshgrid(grid, grid, grid)).reshape(3, -1).T
    out = qsim.run_circuit(prog, vqc.squash(pts))
    rounded = {tuple(np.round(o, 12)) for o in out}
    assert len(rounded) == len(pts)


def test_zero_weights_zero_features_ring_cnot_outputs_zero():
    t = CircuitTemplate(4, 1, "H-then-RY", "ring-CNOT", "RY")
    out = qnn_forward(t, Tensor(np.zeros(4)), Tensor(np.zeros(4))).data
    # direct statevector oracle
    psi = np.full(16, 0.25, complex)
    z = np.array([[1 - 2 * ((i >> (3 - q)) & 1) for i in range(16)] for q in range(4)])
    assert np.allclose(out, z @ np.abs(psi) ** 2, atol=1e-15)
    assert np.allclose(out, 0, atol=1e-15)


@pytest.mark.parametrize("tid", range(1, 7))
def test_qnn_gradients_match_fd(tid):
    t = registry(tid)
    rng = np.random.default_rng(tid)
    prog = expand_template(t)
    for _ in range(20):
        f0 = rng.standard_normal(t.n_qubits)
        w0 = rng.uniform(-math.pi, math.pi, t.n_weights)
        c = rng.standard_normal(t.n_qubits)
        f, w = Tensor(f0, requires_grad=True), Tensor(w0, requires_grad=True)
        with Tape() as tape:
            loss = sum_(mul(qnn_forward(t, f, w, prog), Tensor(c)))
        g = backward(tape, loss)

        def val(ff, ww):
            return float(c @ qsim.run_circuit(prog, vqc.squash(ff), ww))

        h = 1e-6
        for arr, grad, is_f in ((f0, g[f], True), (w0, g[w], False)):
            fd = np.zeros_like(arr)
            for i in range(arr.size):
                e = np.zeros_like(arr)
                e[i] = h
                fd[i] = (val(f0 + e, w0) - val(f0 - e, w0)) / (2 * h) if is_f else \
                        (val(f0, w0 + e) - val(f0, w0 - e)) / (2 * h)
            scale = max(np.max(np.abs(fd)), 1e-3)
            assert np.max(np.abs(grad - fd)) / scale < 1e-6


def test_batched_qnn_matches_single():
    t = registry(6)
    rng = np.random.default_rng(0)
    F = rng.standard_normal((5, 4))
    w = Tensor(rng.uniform(-1, 1, t.n_weights), requires_grad=True)
    Ft = Tensor(F, requires_grad=True)
    with Tape() as tape:
        loss = sum_(qnn_forward(t, Ft, w))
    g = backward(tape, loss)
    gw_sum = np.zeros(t.n_weights)
    for i in range(5):
        fi = Tensor(F[i], requires_grad=True)
        wi = Tensor(w.data, requires_grad=True)
        with Tape() as tp:
            li = sum_(qnn_forward(t, fi, wi))
        gi = backward(tp, li)
        assert np.allclose(gi[fi], g[Ft][i], atol=1e-13)
        gw_sum += gi[wi]
    assert np.allclose(gw_sum, g[w], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.lists(st.sampled_from([-1e6, -50.0, -1.0, 0.0, 1.0, 50.0, 1e6]), min_size=7, max_size=7),
       st.integers(0, 2**31 - 1))
def test_output_bounds_extreme_features(tid, feats, seed):
    t = registry(tid)
    w = np.random.default_rng(seed).uniform(-10, 10, t.n_weights)
    out = QnnLayer(t, w)(np.array(feats[:t.n_qubits])).data
    assert out.shape == (t.n_qubits,)
    assert np.all(np.isfinite(out)) and np.all(np.abs(out) <= 1 + 1e-12)


def test_cyclic_feature_rotation_without_entangling_layers():
    t = CircuitTemplate(5, 0)
    prog = expand_template(t)
    f = np.random.default_rng(1).standard_normal(5)
    a = qsim.run_circuit(prog, vqc.squash(f))
    b = qsim.run_circuit(prog, vqc.squash(np.roll(f, 1)))
    assert np.allclose(np.roll(a, 1), b, atol=1e-14, rtol=0)


def _relabel(prog: CircuitProgram, shift: int) -> CircuitProgram:
    n = prog.n_qubits

    def m(q):
        return None if q is None else (q + shift) % n

    gates = tuple(GateOp(g.kind, m(g.target), m(g.control), g.params) for g in prog.gates)
    return CircuitProgram(n, gates, tuple((m(q), b) for q, b in prog.measurements))


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_ring_wiring_rotates_with_relabelled_register(depth):
    # the ring starts at a different wire after relabelling, so rotating the
    # inputs must match the program whose wires are rotated as well
    n = 4
    t = CircuitTemplate(n, depth, "H-then-RY", "ring-CNOT", "RY")
    prog = expand_template(t)
    rng = np.random.default_rng(depth)
    f = rng.standard_normal(n)
    w = np.full(t.n_weights, 0.3)
    base = qsim.run_circuit(prog, vqc.squash(f), w)
    rolled = qsim.run_circuit(_relabel(prog, 1), vqc.squash(f), w)
    # measurement list of the relabelled program is (1, 2, 3, 0)
    assert np.allclose(base, rolled, atol=1e-14)
    pairs = [(g.control, g.target) for g in prog.gates if g.kind == "CNOT"]
    assert pairs == [(q, (q + 1) % n) for q in range(n)] * depth


def test_registry_six_more_expressive_than_four():
    assert expressibility(registry(6), 5000, 75, seed=0).kl < expressibility(registry(4), 5000, 75, seed=0).kl


def test_template_validation():
    with pytest.raises(ConfigurationError):
        CircuitTemplate(9, 1)
    with pytest.raises(ConfigurationError):
        CircuitTemplate(2, 1, embedding="amplitude")
    with pytest.raises(ConfigurationError):
        CircuitTemplate(2, -1)
