"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Only the primitives needed by the classical halves of the classifier are
provided: dense layers, 2-D cross-correlation, ReLU, 2x2 max pooling,
reshaping, and a numerically stable two-class softmax cross-entropy.
Every primitive accepts either a single sample or a leading batch axis.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient; outside a tape they simply compute.

>>> x = Tensor([3.0], requires_grad=True)
>>> with Tape() as tape:
...     y = sum_(x * x)
>>> backward(tape, y)[x]
array([6.])
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractError, DataError, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "backward",
    "custom_op",
    "dense",
    "conv2d",
    "relu",
    "maxpool2x2",
    "crop",
    "reshape",
    "flatten",
    "add",
    "mul",
    "sum_",
    "softmax",
    "softmax_cross_entropy",
    "grad_check",
]

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "hybridqc_active_tape", default=None
)


class Tensor:
    """Immutable dense real array.

    The wrapped ``data`` is a read-only float64 ndarray; ``shape`` follows it.
    """

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal constructor; takes ownership of a freshly computed array
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered log of recorded primitives.

    Records are appended in execution order, so every input precedes its
    consumer. A tape belongs to one thread of work; use one tape per worker.
    """

    records: list[_Record] = field(default_factory=list)
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def ops(self) -> list[str]:
        return [r.op for r in self.records]


def custom_op(
    name: str,
    inputs: Sequence[Tensor],
    output: np.ndarray,
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap a precomputed ``output`` as a differentiable node.

    ``vjp(g)`` receives the cotangent of the output and must return one
    cotangent (or None) per input, each with the input's shape.
    """
    inputs = tuple(inputs)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(output, needs)
    tape = _ACTIVE_TAPE.get()
    if needs and tape is not None:
        tape.records.append(_Record(name, inputs, out, vjp))
    return out


class Gradients:
    """Mapping from tensors to their accumulated gradient arrays."""

    def __init__(self, grads: dict[int, np.ndarray], keep: dict[int, Tensor]):
        self._grads = grads
        self._keep = keep

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        g = self._grads.get(id(tensor))
        if g is None or self._keep.get(id(tensor)) is not tensor:
            return np.zeros(tensor.shape)
        return g

    def __contains__(self, tensor: Tensor) -> bool:
        return self._keep.get(id(tensor)) is tensor

    def __len__(self) -> int:
        return len(self._grads)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse accumulation from a scalar ``loss`` over ``tape``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    keep: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.output))
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64).reshape(t.shape)
                keep[key] = t
    return Gradients(grads, keep)


# --------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a scalar or share ``a``'s shape."""
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return custom_op("add", (a, b), out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return custom_op("mul", (a, b), out, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def sum_(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return custom_op("sum", (x,), np.asarray(x.data.sum()), vjp)


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer ``out[j] = sum_i W[j, i] x[i] + b[j]``.

    ``x`` is ``(n_in,)`` or ``(batch, n_in)``; ``W`` is ``(n_out, n_in)``.
    """
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"dense: input shape {x.shape} does not conform to weight shape {W.shape} "
            f"and bias shape {b.shape}"
        )
    out = x.data @ W.data.T + b.data

    def vjp(g):
        gx = g @ W.data
        if x.ndim == 1:
            gW = np.outer(g, x.data)
            gb = g
        else:
            gW = g.T @ x.data
            gb = g.sum(axis=0)
        return gx, gW, gb

    return custom_op("dense", (x, W, b), out, vjp)


def conv2d(x: Tensor, kernels: Tensor, b: Tensor) -> Tensor:
    """Stride-1, valid-padding cross-correlation.

    ``x`` is ``(C, H, W)`` or ``(batch, C, H, W)``; ``kernels`` is
    ``(K, C, kh, kw)``; the result is ``(..., K, H-kh+1, W-kw+1)``.
    """
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise DimensionError(f"conv2d: input shape {x.shape}, kernel shape {kernels.shape}")
    K, C, kh, kw = kernels.shape
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    B, Cx, H, Wd = xd.shape
    if Cx != C:
        raise DimensionError(f"conv2d: input shape {x.shape} has {Cx} channels, kernel shape {kernels.shape} expects {C}")
    if kh > H or kw > Wd:
        raise DimensionError(f"conv2d: kernel shape {kernels.shape} larger than input shape {x.shape}")
    if b.shape != (K,):
        raise DimensionError(f"conv2d: bias shape {b.shape} does not match {K} kernels")
    Ho, Wo = H - kh + 1, Wd - kw + 1
    # (B, C, Ho, Wo, kh, kw) -> rows of patches
    cols = sliding_window_view(xd, (kh, kw), axis=(2, 3))
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    kmat = kernels.data.reshape(K, C * kh * kw)
    out = (cols @ kmat.T).reshape(B, Ho, Wo, K).transpose(0, 3, 1, 2) + b.data[None, :, None, None]
    if single:
        out = out[0]

    def vjp(g):
        gd = g[None] if single else g
        g2 = gd.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, K)
        gk = (g2.T @ cols).reshape(K, C, kh, kw)
        gb = gd.sum(axis=(0, 2, 3))
        gx = np.zeros_like(xd)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + Ho, j:j + Wo] += np.einsum("bkhw,kc->bchw", gd, kernels.data[:, :, i, j])
        return (gx[0] if single else gx), gk, gb

    return custom_op("conv2d", (x, kernels, b), np.ascontiguousarray(out), vjp)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at 0 is 0."""
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)
    return custom_op("relu", (x,), out, lambda g: (g * mask,))


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling over the last two axes.

    Gradient flows to the block maximum; ties go to the first element in
    row-major order.
    """
    if x.ndim < 2:
        raise DimensionError(f"maxpool2x2: input shape {x.shape} needs two spatial axes")
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2x2: spatial size {H}x{W} must be even")
    lead = x.shape[:-2]
    blocks = x.data.reshape(*lead, H // 2, 2, W // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, H // 2, W // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        scatter = np.zeros(blocks.shape)
        np.put_along_axis(scatter, arg[..., None], g[..., None], axis=-1)
        scatter = scatter.reshape(*lead, H // 2, W // 2, 2, 2)
        return (np.moveaxis(scatter, -2, -3).reshape(x.shape),)

    return custom_op("maxpool2x2", (x,), out, vjp)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height x width`` window of the last two axes."""
    H, W = x.shape[-2:]
    if height > H or width > W:
        raise DimensionError(f"crop: {height}x{width} exceeds input shape {x.shape}")
    out = x.data[..., :height, :width]

    def vjp(g):
        gx = np.zeros(x.shape)
        gx[..., :height, :width] = g
        return (gx,)

    return custom_op("crop", (x,), out.copy(), vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    return custom_op("reshape", (x,), out.copy(), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor, batched: bool) -> Tensor:
    """Collapse all axes except the leading batch axis (if ``batched``)."""
    shape = (x.shape[0], -1) if batched else (-1,)
    return reshape(x, shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _nll(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # -log softmax[label] = log sum_j exp(l_j - l_label), evaluated with log1p
    # over the non-maximal terms so tiny losses keep full precision
    z = logits - np.take_along_axis(logits, labels[:, None], axis=1)
    top = z.argmax(axis=1)
    m = np.take_along_axis(z, top[:, None], axis=1)
    e = np.exp(z - m)
    np.put_along_axis(e, top[:, None], 0.0, axis=1)
    return m[:, 0] + np.log1p(e.sum(axis=1))


def softmax_cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Two-class softmax cross-entropy ``-log softmax(logits)[label]``.

    ``logits`` is ``(2,)`` with an integer label, or ``(batch, 2)`` with a
    label vector, reduced by ``"mean"`` or ``"sum"``.
    """
    single = logits.ndim == 1
    lg = logits.data[None] if single else logits.data
    y = np.atleast_1d(np.asarray(labels))
    if lg.ndim != 2 or lg.shape[1] != 2:
        raise DimensionError(f"softmax_cross_entropy: logits shape {logits.shape}, expected (2,) or (batch, 2)")
    if y.shape != (lg.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: {y.shape[0]} labels for {lg.shape[0]} logit rows")
    if not np.issubdtype(y.dtype, np.integer) and not np.all(np.mod(y, 1) == 0):
        raise DataError(f"labels must be class indices, got {y!r}")
    y = y.astype(np.int64)
    if np.any((y < 0) | (y > 1)):
        raise DataError(f"labels must be 0 or 1, got {sorted(set(y.tolist()))}")
    losses = _nll(lg, y)
    if reduction == "mean":
        scale = 1.0 / lg.shape[0]
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    out = np.asarray(losses.sum() * scale)

    def vjp(g):
        p = softmax(lg)
        p[np.arange(len(y)), y] -= 1.0
        gl = p * (g * scale)
        return (gl[0] if single else gl,)

    return custom_op("softmax_cross_entropy", (logits,), out, vjp)


def grad_check(
    function: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
    indices=None,
    floor: float = 1e-8,
) -> float:
    """Max relative error between the tape gradient and central differences.

    ``function`` maps a Tensor to a scalar Tensor. Each checked coordinate
    contributes ``|g - fd| / max(|g|, |fd|, floor)``; ``indices`` restricts the
    check to a subset of flat coordinates.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        y = function(x)
    g = backward(tape, y)[x].ravel()
    idx = np.arange(x0.size) if indices is None else np.asarray(indices).ravel()
    worst = 0.0
    for i in idx:
        xp = x0.copy().ravel()
        xm = xp.copy()
        xp[i] += step
        xm[i] -= step
        fp = float(function(Tensor(xp.reshape(x0.shape))).data)
        fm = float(function(Tensor(xm.reshape(x0.shape))).data)
        fd = (fp - fm) / (2.0 * step)
        err = abs(g[i] - fd) / max(abs(g[i]), abs(fd), floor)
        worst = max(worst, err)
    return worst
