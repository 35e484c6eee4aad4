import math

import numpy as np
import pytest
from sklearn.base import clone

from hybridqc import model as M
from hybridqc.diffcore import Tape, Tensor, backward, softmax_cross_entropy
from hybridqc.exceptions import ConfigurationError, DataError, DimensionError, FormatError
from hybridqc.model import HybridClassifier
from hybridqc.bench.data import generate_synthetic


@pytest.fixture(scope="module")
def images():
    ds = generate_synthetic(40, 12, 12, seed=3)
    return ds.images, ds.labels


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0.75).astype(int)
    keep = np.abs(X[:, 0] + 0.5 * X[:, 1] - 0.75) > 0.05
    return X[keep], y[keep]


def test_estimator_params_and_clone():
    clf = HybridClassifier(template=3, epochs=2)
    p = clf.get_params()
    assert p["template"] == 3 and p["epochs"] == 2
    assert clone(clf).get_params() == p


def test_separable_linear_reaches_099():
    X, y = separable()
    clf = HybridClassifier(computation_type="classical", extractor="linear", epochs=50,
                           batch_size=16, learning_rate=0.05, random_state=0).fit(X, y)
    assert clf.score(X, y) >= 0.99


def test_hybrid_on_features_learns_separable_set():
    X, y = separable()
    clf = HybridClassifier(extractor="features", template=1, epochs=30, batch_size=16,
                           learning_rate=0.05).fit(X, y)
    assert clf.score(X, y) >= 0.9


def test_full_batch_gd_loss_is_non_increasing():
    X, y = separable(100)
    clf = HybridClassifier(computation_type="classical", extractor="linear", epochs=40,
                           batch_size=len(X), learning_rate=0.01, optimizer="sgd").fit(X, y)
    losses = [h["train_loss"] for h in clf.history_]
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


def test_minibatch_loss_mostly_decreasing():
    # Adam jitters once the loss is ~1e-3, so the allowance is checked for SGD
    X, y = separable()
    clf = HybridClassifier(computation_type="classical", extractor="linear", epochs=40,
                           batch_size=16, learning_rate=0.01, optimizer="sgd").fit(X, y)
    losses = [h["train_loss"] for h in clf.history_]
    ups = sum(b > a for a, b in zip(losses, losses[1:]))
    assert ups <= 0.05 * (len(losses) - 1)


def test_zero_learning_rate_leaves_params(images):
    X, y = images
    clf = HybridClassifier(epochs=2, learning_rate=0.0, batch_size=8)
    clf.initialize(X.shape[1:])
    before = {k: v.copy() for k, v in clf.params_.items()}
    clf.fit(X, y)
    assert all(np.array_equal(before[k], clf.params_[k]) for k in before)


def test_seeded_training_is_deterministic(images):
    X, y = images
    a = HybridClassifier(epochs=2, batch_size=8, random_state=5).fit(X, y)
    b = HybridClassifier(epochs=2, batch_size=8, random_state=5).fit(X, y)
    assert a.parameter_checksum() == b.parameter_checksum()
    assert a.history_ == b.history_
    c = HybridClassifier(epochs=2, batch_size=8, random_state=6).fit(X, y)
    assert c.parameter_checksum() != a.parameter_checksum()


def test_untrained_forward_is_deterministic_and_shapes_match(images):
    X, _ = images
    outs = []
    for ct in ("hybrid", "classical"):
        m1 = HybridClassifier(computation_type=ct).initialize(X.shape[1:])
        m2 = HybridClassifier(computation_type=ct).initialize(X.shape[1:])
        a, b = M.forward(m1, X[0]).data, M.forward(m2, X[0]).data
        assert a.tobytes() == b.tobytes()
        assert a.shape == (2,) and np.all(np.isfinite(a))
        outs.append(a.shape)
    assert outs[0] == outs[1]
    m = HybridClassifier().initialize(X.shape[1:])
    assert m.logits(X).shape == (len(X), 2)


def test_classical_has_no_quantum_params(images):
    X, _ = images
    c = HybridClassifier(computation_type="classical").initialize(X.shape[1:])
    h = HybridClassifier(computation_type="hybrid").initialize(X.shape[1:])
    assert c.template_ is None and not any("q" == k[0] for k in c.params_)
    assert h.params_["qnn_w"].shape == (h.template_.n_weights,)


def test_wrong_image_shape(images):
    X, y = images
    m = HybridClassifier().initialize(X.shape[1:])
    with pytest.raises(DimensionError):
        m.predict(np.zeros((2, 3, 14, 14)))
    with pytest.raises(DimensionError):
        HybridClassifier().initialize((3, 8, 8))


def _fd_input_grad_check(model, X, y, n_pixels, rng, h=1e-6):
    _, g = model.loss_input_gradient(X, y)
    worst = 0.0
    for i in range(len(X)):
        for flat in rng.choice(X[i].size, n_pixels, replace=False):
            idx = np.unravel_index(flat, X[i].shape)
            xp, xm = X[i].copy(), X[i].copy()
            xp[idx] += h
            xm[idx] -= h
            lp = float(softmax_cross_entropy(Tensor(model.logits(xp[None])), y[i:i + 1]).data)
            lm = float(softmax_cross_entropy(Tensor(model.logits(xm[None])), y[i:i + 1]).data)
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(g[i][idx] - fd) / max(abs(g[i][idx]), abs(fd), 1e-7))
    return worst


@pytest.mark.parametrize("ct", ["hybrid", "classical"])
def test_input_gradient_matches_fd(images, ct):
    X, y = images
    model = HybridClassifier(computation_type=ct, epochs=1, batch_size=8).fit(X, y)
    rng = np.random.default_rng(0)
    sel = rng.choice(len(X), 5, replace=False)
    assert _fd_input_grad_check(model, X[sel], y[sel], 10, rng) < 1e-4


def test_loss_input_gradient_is_per_sample(images):
    X, y = images
    m = HybridClassifier().initialize(X.shape[1:])
    vals, g = m.loss_input_gradient(X[:3], y[:3])
    _, g0 = m.loss_input_gradient(X[:1], y[:1])
    assert vals.shape == (3,) and g.shape == X[:3].shape
    assert np.allclose(g[0], g0[0], atol=1e-15)


def test_margin_gradient(images):
    X, _ = images
    m = HybridClassifier().initialize(X.shape[1:])
    f, w = m.margin_input_gradient(X[:2])
    z = m.logits(X[:2])
    assert np.allclose(f, z[:, 1] - z[:, 0])
    assert np.allclose(m.decision_function(X[:2]), f)
    assert w.shape == X[:2].shape


class _FixedLogits(HybridClassifier):
    def __init__(self, z=None, **kw):
        super().__init__(**kw)
        self.z = z

    def logits(self, X):
        return np.tile(np.asarray(self.z, float), (len(np.atleast_2d(X)), 1))


def test_predict_examples():
    cls, conf = M.predict(_FixedLogits([2.0, -1.0]), np.zeros(1))
    assert cls == 0 and conf == pytest.approx(1 / (1 + math.exp(-3)), rel=1e-12)
    assert round(conf, 4) == 0.9526
    assert M.predict(_FixedLogits([0.7, 0.7]), np.zeros(1))[0] == 0
    for shift in (-100.0, 3.0, 1e3):
        assert M.predict(_FixedLogits([2.0 + shift, -1.0 + shift]), np.zeros(1))[0] == 0
        assert M.predict(_FixedLogits([-1.0 + shift, 2.0 + shift]), np.zeros(1))[0] == 1


def test_accuracy_examples(images):
    X, y = images
    m = HybridClassifier(epochs=1, batch_size=8).fit(X, y)
    pred = m.predict(X)
    assert M.accuracy(m, X, pred) == 1.0
    acc = M.accuracy(m, X, y)
    assert M.accuracy(m, X, 1 - y) == pytest.approx(1 - acc)
    with pytest.raises(DataError):
        M.accuracy(m, X[:0], y[:0])


def test_single_class_training_is_data_error(images):
    X, y = images
    with pytest.raises(DataError):
        HybridClassifier(epochs=1).fit(X[y == 1], y[y == 1])
    with pytest.raises(DataError):
        HybridClassifier(epochs=1).fit(X, np.full(len(X), 2))


def test_bad_configuration():
    with pytest.raises(ConfigurationError):
        HybridClassifier(optimizer="rmsprop").fit(np.zeros((4, 2)), [0, 1, 0, 1])
    with pytest.raises(ConfigurationError):
        HybridClassifier(computation_type="quantum").fit(np.zeros((4, 2)), [0, 1, 0, 1])


def test_eval_set_restores_best(images):
    X, y = images
    m = HybridClassifier(epochs=4, batch_size=8).fit(X[:30], y[:30], eval_set=(X[30:], y[30:]))
    accs = [h["val_acc"] for h in m.history_]
    assert m.best_epoch_ == accs.index(max(accs)) + 1  # earliest best epoch wins
    assert [h["epoch"] for h in m.history_] == [1, 2, 3, 4]
    assert M.accuracy(m, X[30:], y[30:]) == max(accs)


@pytest.mark.parametrize("ct", ["hybrid", "classical"])
def test_checkpoint_round_trip(tmp_path, images, ct):
    X, y = images
    m = HybridClassifier(computation_type=ct, epochs=1, batch_size=8, template=6).fit(X, y)
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(m, path)
    back = M.load_checkpoint(path)
    probes = np.random.default_rng(0).uniform(0, 1, (20,) + X.shape[1:])
    assert np.max(np.abs(back.logits(probes) - m.logits(probes))) == 0.0
    assert back.parameter_checksum() == m.parameter_checksum()
    if ct == "classical":
        assert back.template_ is None and "qnn_w" not in back.params_
    else:
        assert back.template_ == m.template_


def test_checkpoint_corruption(tmp_path, images):
    X, y = images
    m = HybridClassifier(epochs=1, batch_size=8).fit(X, y)
    path = tmp_path / "m.ckpt"
    m.save(path)
    data = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(FormatError, match="magic"):
        M.load_checkpoint(bad)
    bad.write_bytes(data[:-5])
    with pytest.raises(FormatError):
        M.load_checkpoint(bad)
    bad.write_bytes(data[:20])
    with pytest.raises(FormatError):
        M.load_checkpoint(bad)
    ver = bytearray(data)
    ver[8] = 99
    bad.write_bytes(bytes(ver))
    with pytest.raises(FormatError, match="version"):
        M.load_checkpoint(bad)
    assert HybridClassifier.load(path).parameter_checksum() == m.parameter_checksum()


def test_unfitted_model_raises():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        HybridClassifier().predict(np.zeros((1, 3, 12, 12)))


def test_tape_reaches_input_through_quantum_layer(images):
    X, _ = images
    m = HybridClassifier().initialize(X.shape[1:])
    x = Tensor(X[0], requires_grad=True)
    with Tape() as tape:
        loss = softmax_cross_entropy(M.forward(m, x), 1)
    assert "qnn" in tape.ops()
    assert np.any(backward(tape, loss)[x] != 0)
