"""Classical and hybrid classical-quantum binary classifiers.

Both computation types share one estimator, :class:`HybridClassifier`:

* classical: extractor -> dense(hidden) -> ReLU -> dense(2)
* hybrid:    extractor -> dense(n_qubits) -> quantum layer -> dense(2)

Extractors:

* ``"cnn"``: conv 3x3 -> ReLU -> 2x2 pool -> conv 3x3 -> ReLU -> 2x2 pool ->
  dense(16) -> ReLU, on ``(C, H, W)`` images. Odd spatial sizes are cropped
  to even before each pool.
* ``"linear"``: flatten -> dense(16), no activation.
* ``"features"``: identity on precomputed feature vectors (nothing trains).

The whole forward pass is one autodiff graph, so the same model serves
training and input-gradient attacks.
"""
from __future__ import annotations

import copy
import json
import math
import struct
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import diffcore as dc
from .diffcore import Tape, Tensor, backward
from .exceptions import ConfigurationError, DataError, DimensionError, FormatError
from .validation import check_both_classes, check_inputs, check_labels
from .vqc import CircuitTemplate, expand_template, init_weights, qnn_forward, registry

EXTRACTORS = ("cnn", "linear", "features")
COMPUTATION_TYPES = ("classical", "hybrid")
_EVAL_CHUNK = 256


def _resolve_template(template) -> CircuitTemplate:
    if isinstance(template, CircuitTemplate):
        return template
    if isinstance(template, dict):
        fields = {k: v for k, v in template.items() if k != "template_id"}
        return CircuitTemplate(**fields, template_id=template.get("template_id"))
    return registry(template)


class HybridClassifier(ClassifierMixin, BaseEstimator):
    """Binary image classifier with an optional variational quantum layer.

    Parameters
    ----------
    computation_type : {"hybrid", "classical"}
    extractor : {"cnn", "linear", "features"}
    template : int, dict or CircuitTemplate
        Quantum layer template (registry id 1-6 or a custom template). Ignored
        for classical models.
    hidden_dim : int
        Width of the classical hidden layer.
    conv_channels, extractor_dim : int
        CNN channel count and width of the extractor's output.
    epochs, batch_size, learning_rate : training schedule.
    optimizer : {"adam", "sgd"}
        Adam uses beta1=0.9, beta2=0.999, eps=1e-8.
    random_state : int
        Seeds initialisation and mini-batch shuffling.
    """

    def __init__(self, computation_type="hybrid", extractor="cnn", template=1, hidden_dim=16,
                 conv_channels=8, extractor_dim=16, epochs=20, batch_size=32,
                 learning_rate=0.01, optimizer="adam", random_state=0):
        self.computation_type = computation_type
        self.extractor = extractor
        self.template = template
        self.hidden_dim = hidden_dim
        self.conv_channels = conv_channels
        self.extractor_dim = extractor_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.random_state = random_state

    # ------------------------------------------------------------------
    # construction

    def _check_config(self):
        if self.computation_type not in COMPUTATION_TYPES:
            raise ConfigurationError(f"computation_type must be one of {COMPUTATION_TYPES}")
        if self.extractor not in EXTRACTORS:
            raise ConfigurationError(f"extractor must be one of {EXTRACTORS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError("optimizer must be 'adam' or 'sgd'")
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("need learning_rate >= 0, epochs >= 0, batch_size >= 1")

    @property
    def is_hybrid(self) -> bool:
        return self.computation_type == "hybrid"

    @property
    def template_(self) -> CircuitTemplate | None:
        return _resolve_template(self.template) if self.is_hybrid else None

    def _cnn_shapes(self, shape):
        C, H, W = shape
        h, w = H - 2, W - 2
        h, w = h // 2, w // 2
        h, w = h - 2, w - 2
        if h < 2 or w < 2:
            raise DimensionError(f"cnn extractor needs images of at least 12x12, got {H}x{W}")
        return self.conv_channels * (h // 2) * (w // 2)

    def _init_params(self, input_shape, rng: np.random.Generator) -> dict[str, np.ndarray]:
        def he(shape, fan_in):
            return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)

        p: dict[str, np.ndarray] = {}
        if self.extractor == "cnn":
            if len(input_shape) != 3:
                raise DimensionError(f"cnn extractor expects (C, H, W) samples, got {input_shape}")
            C = input_shape[0]
            k = self.conv_channels
            p["conv1_k"] = he((k, C, 3, 3), C * 9)
            p["conv1_b"] = np.zeros(k)
            p["conv2_k"] = he((k, k, 3, 3), k * 9)
            p["conv2_b"] = np.zeros(k)
            flat = self._cnn_shapes(input_shape)
            p["ext_W"] = he((self.extractor_dim, flat), flat)
            p["ext_b"] = np.zeros(self.extractor_dim)
            ext_dim = self.extractor_dim
        elif self.extractor == "linear":
            flat = int(np.prod(input_shape))
            p["ext_W"] = rng.standard_normal((self.extractor_dim, flat)) / math.sqrt(flat)
            p["ext_b"] = np.zeros(self.extractor_dim)
            ext_dim = self.extractor_dim
        else:
            if len(input_shape) != 1:
                raise DimensionError(f"features extractor expects 1-d feature vectors, got {input_shape}")
            ext_dim = input_shape[0]
        if self.is_hybrid:
            tmpl = self.template_
            nq = tmpl.n_qubits
            p["pre_W"] = rng.standard_normal((nq, ext_dim)) / math.sqrt(ext_dim)
            p["pre_b"] = np.zeros(nq)
            p["qnn_w"] = init_weights(tmpl, rng)
            p["out_W"] = rng.standard_normal((2, nq)) / math.sqrt(nq)
            p["out_b"] = np.zeros(2)
        else:
            h = self.hidden_dim
            p["hid_W"] = he((h, ext_dim), ext_dim)
            p["hid_b"] = np.zeros(h)
            p["out_W"] = rng.standard_normal((2, h)) / math.sqrt(h)
            p["out_b"] = np.zeros(2)
        return p

    # ------------------------------------------------------------------
    # graph

    def _graph(self, params: dict[str, Tensor], x: Tensor) -> Tensor:
        """Logits ``(batch, 2)`` for a batch tensor ``x``."""
        if self.extractor == "cnn":
            h = dc.relu(dc.conv2d(x, params["conv1_k"], params["conv1_b"]))
            h = dc.maxpool2x2(_crop_even(h))
            h = dc.relu(dc.conv2d(h, params["conv2_k"], params["conv2_b"]))
            h = dc.maxpool2x2(_crop_even(h))
            h = dc.relu(dc.dense(dc.flatten(h, batched=True), params["ext_W"], params["ext_b"]))
        elif self.extractor == "linear":
            h = dc.dense(dc.flatten(x, batched=True), params["ext_W"], params["ext_b"])
        else:
            h = x
        if self.is_hybrid:
            z = dc.dense(h, params["pre_W"], params["pre_b"])
            q = qnn_forward(self.template_, z, params["qnn_w"], self._program)
            return dc.dense(q, params["out_W"], params["out_b"])
        z = dc.relu(dc.dense(h, params["hid_W"], params["hid_b"]))
        return dc.dense(z, params["out_W"], params["out_b"])

    @property
    def _program(self):
        if not self.is_hybrid:
            return None
        cached = getattr(self, "_program_cache", None)
        tmpl = self.template_
        if cached is None or cached[0] != tmpl:
            cached = (tmpl, expand_template(tmpl))
            self._program_cache = cached
        return cached[1]

    def _tensors(self, requires_grad: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params_.items()}

    def _check_X(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_inputs(X)
        if X.shape[1:] != tuple(self.input_shape_):
            raise DimensionError(f"expected samples of shape {tuple(self.input_shape_)}, got {X.shape[1:]}")
        return X

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit() or initialize() before using the model")

    # ------------------------------------------------------------------
    # public API

    def initialize(self, input_shape) -> "HybridClassifier":
        """Create seeded, untrained parameters for samples of ``input_shape``."""
        self._check_config()
        init_rng, _ = _rngs(self.random_state)
        self.input_shape_ = tuple(int(s) for s in input_shape)
        self.params_ = self._init_params(self.input_shape_, init_rng)
        self.classes_ = np.array([0, 1])
        self.history_ = []
        return self

    def forward(self, x: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        """Logits on the active tape; ``x`` is one sample or a batch."""
        self._check_fitted()
        single = x.ndim == len(self.input_shape_)
        if x.shape[-len(self.input_shape_):] != tuple(self.input_shape_):
            raise DimensionError(f"expected samples of shape {tuple(self.input_shape_)}, got {x.shape}")
        params = params or self._tensors(False)
        xb = dc.reshape(x, (1,) + x.shape) if single else x
        out = self._graph(params, xb)
        return dc.reshape(out, (2,)) if single else out

    def fit(self, X, y, eval_set=None) -> "HybridClassifier":
        """Mini-batch training on softmax cross-entropy.

        ``eval_set=(X_val, y_val)`` enables per-epoch validation; the
        parameters with the best validation accuracy (earliest on ties) are
        kept at the end.
        """
        self._check_config()
        X = check_inputs(X)
        y = check_labels(y, len(X))
        check_both_classes(y)
        if eval_set is not None:
            Xv = check_inputs(eval_set[0])
            yv = check_labels(eval_set[1], len(Xv))
        self.initialize(X.shape[1:])
        _, shuffle_rng = _rngs(self.random_state)
        opt = _Optimizer(self.optimizer, self.learning_rate, self.params_)
        best = (-1.0, None, -1)
        n = len(X)
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            loss_sum, correct = 0.0, 0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                params = self._tensors(True)
                with Tape() as tape:
                    logits = self._graph(params, Tensor(X[idx]))
                    loss = dc.softmax_cross_entropy(logits, y[idx], reduction="mean")
                grads = backward(tape, loss)
                loss_sum += float(loss.data) * len(idx)
                correct += int(np.sum(_argmax(logits.data) == y[idx]))
                opt.step(self.params_, {k: grads[t] for k, t in params.items()})
            record = {"epoch": epoch + 1, "train_loss": loss_sum / n, "train_acc": correct / n}
            if eval_set is not None:
                vl = self.logits(Xv)
                record["val_loss"] = float(np.mean(dc._nll(vl, yv)))
                record["val_acc"] = float(np.mean(_argmax(vl) == yv))
                if record["val_acc"] > best[0]:
                    best = (record["val_acc"], copy.deepcopy(self.params_), epoch + 1)
            self.history_.append(record)
        if best[1] is not None:
            self.params_ = best[1]
            self.best_epoch_ = best[2]
        return self

    def logits(self, X) -> np.ndarray:
        X = self._check_X(X)
        params = self._tensors(False)
        parts = [self._graph(params, Tensor(X[s:s + _EVAL_CHUNK])).data
                 for s in range(0, len(X), _EVAL_CHUNK)]
        return np.concatenate(parts, axis=0)

    def decision_function(self, X) -> np.ndarray:
        """Margin ``logit_1 - logit_0``; positive means class 1."""
        lg = self.logits(X)
        return lg[:, 1] - lg[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        return dc.softmax(self.logits(X))

    def predict(self, X) -> np.ndarray:
        """Argmax class; tied logits give class 0."""
        return _argmax(self.logits(X))

    def score(self, X, y, sample_weight=None) -> float:
        return accuracy(self, X, y)

    def loss_input_gradient(self, X, y) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample cross-entropy and its gradient with respect to ``X``."""
        X = self._check_X(X)
        y = check_labels(y, len(X))
        return self._input_gradient(X, lambda lg, s: dc.softmax_cross_entropy(lg, y[s], reduction="sum"),
                                    lambda lg, s: dc._nll(lg, y[s]))

    def margin_input_gradient(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Margin ``logit_1 - logit_0`` per sample and its gradient w.r.t. ``X``."""
        X = self._check_X(X)
        sign = Tensor([-1.0, 1.0])
        return self._input_gradient(X, lambda lg, s: dc.sum_(dc.mul(lg, sign)),
                                    lambda lg, s: lg[:, 1] - lg[:, 0])

    def _input_gradient(self, X, objective, per_sample):
        params = self._tensors(False)
        values = np.empty(len(X))
        grads = np.empty_like(X)
        for s in range(0, len(X), _EVAL_CHUNK):
            sl = slice(s, s + _EVAL_CHUNK)
            x = Tensor(X[sl], requires_grad=True)
            with Tape() as tape:
                lg = self._graph(params, x)
                obj = objective(lg, sl)
            grads[sl] = backward(tape, obj)[x]
            values[sl] = per_sample(lg.data, sl)
        return values, grads

    def parameter_checksum(self) -> str:
        import hashlib
        self._check_fitted()
        h = hashlib.sha256()
        for k in sorted(self.params_):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params_[k]).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "HybridClassifier":
        return load_checkpoint(path)


def _crop_even(h: Tensor) -> Tensor:
    H, W = h.shape[-2:]
    if H % 2 or W % 2:
        return dc.crop(h, H - H % 2, W - W % 2)
    return h


def _argmax(logits: np.ndarray) -> np.ndarray:
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


def _rngs(seed) -> tuple[np.random.Generator, np.random.Generator]:
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


class _Optimizer:
    def __init__(self, kind: str, lr: float, params: dict[str, np.ndarray],
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.kind, self.lr = kind, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k in params:
            g = grads[k]
            if self.kind == "sgd":
                params[k] = params[k] - self.lr * g
                continue
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1 ** self.t)
            vhat = self.v[k] / (1 - self.beta2 ** self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ----------------------------------------------------------------------
# module-level conveniences


def forward(model: HybridClassifier, image) -> Tensor:
    """Logits ``(2,)`` for one image; recorded on the active tape."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    return model.forward(x)


def predict(model: HybridClassifier, image) -> tuple[int, float]:
    """Class and softmax confidence for one sample."""
    p = model.predict_proba(np.asarray(image)[None])[0]
    cls = int(p[1] > p[0])
    return cls, float(p[cls])


def accuracy(model: HybridClassifier, X, y) -> float:
    X = np.asarray(X)
    if X.size == 0 or len(X) == 0:
        raise DataError("accuracy of an empty set is undefined")
    y = check_labels(y, len(X))
    return float(np.mean(model.predict(X) == y))


# ----------------------------------------------------------------------
# checkpoints: MAGIC | u32 version | u64 header length | JSON header | float64 payload

MAGIC = b"HQCCKPT\x00"
FORMAT_VERSION = 1


def save_checkpoint(model: HybridClassifier, path) -> None:
    model._check_fitted()
    params = model.get_params()
    tmpl = model.template_
    params["template"] = tmpl.to_dict() if tmpl is not None else params["template"]
    if isinstance(params["template"], CircuitTemplate):
        params["template"] = params["template"].to_dict()
    arrays, offset, payload = [], 0, []
    for name in sorted(model.params_):
        arr = np.ascontiguousarray(model.params_[name], dtype="<f8")
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "estimator": params,
        "template_id": tmpl.template_id if tmpl is not None else None,
        "input_shape": list(model.input_shape_),
        "arrays": arrays,
        "payload_bytes": offset,
        "history": model.history_,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(b"".join(payload))


def load_checkpoint(path) -> HybridClassifier:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic header)")
    pos = len(MAGIC)
    if len(data) < pos + 12:
        raise FormatError(f"{path}: truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", data[pos:pos + 12])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
    pos += 12
    if len(data) < pos + hlen:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[pos:pos + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt checkpoint header: {exc}") from None
    pos += hlen
    if len(data) != pos + header["payload_bytes"]:
        raise FormatError(f"{path}: payload is {len(data) - pos} bytes, expected {header['payload_bytes']}")
    model = HybridClassifier(**header["estimator"])
    model.input_shape_ = tuple(header["input_shape"])
    model.classes_ = np.array([0, 1])
    model.history_ = header.get("history", [])
    params = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        start = pos + spec["offset"]
        params[spec["name"]] = np.frombuffer(data[start:start + 8 * n], dtype="<f8").reshape(spec["shape"]).astype(np.float64)
    model.params_ = params
    return model
