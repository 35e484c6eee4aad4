"""Input checks shared by the estimator, attacks and data loaders."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DataError, DimensionError


def check_inputs(X, ndim: int | None = None) -> np.ndarray:
    """Finite float64 array with at least one sample.

    ``ndim`` pins the total number of axes (batch axis included).
    """
    try:
        arr = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False,
                          ensure_all_finite=True, copy=False)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if arr.ndim < 2:
        raise DimensionError(f"expected a batch of samples, got shape {arr.shape}")
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected {ndim}-d input (batch first), got shape {arr.shape}")
    return arr


def check_labels(y, n_samples: int | None = None) -> np.ndarray:
    """Integer class labels in {0, 1}."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise DimensionError(f"labels must be 1-d, got shape {arr.shape}")
    if arr.size == 0:
        raise DataError("empty label vector")
    if arr.dtype.kind == "f":
        if not np.all(np.mod(arr, 1) == 0):
            raise DataError("labels must be integers")
    elif arr.dtype.kind not in "iub":
        raise DataError(f"labels must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    bad = sorted(set(arr[(arr != 0) & (arr != 1)].tolist()))
    if bad:
        raise DataError(f"labels must be 0 or 1, found {bad}")
    if n_samples is not None and len(arr) != n_samples:
        raise DimensionError(f"{len(arr)} labels for {n_samples} samples")
    return arr


def check_both_classes(y: np.ndarray) -> None:
    present = set(np.unique(y).tolist())
    if present != {0, 1}:
        raise DataError(f"training data must contain both classes, found only {sorted(present)}")
