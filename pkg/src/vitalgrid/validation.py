"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .errors import DataError


def as_float_matrix(X, name: str = "X", require_finite: bool = True) -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally rejecting NaN/inf entries."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if require_finite and not np.isfinite(arr).all():
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_float_vector(y, name: str = "y", require_finite: bool = True) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64).ravel()
    if require_finite and not np.isfinite(arr).all():
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_binary_labels(y, name: str = "y") -> np.ndarray:
    arr = np.asarray(y).ravel()
    vals = np.unique(arr)
    if not np.isin(vals, (0, 1)).all():
        raise DataError(f"{name} must contain only 0/1 labels, got {vals[:10]}")
    return arr.astype(np.int64)


def check_same_length(a, b, names: str = "X, y") -> None:
    if len(a) != len(b):
        raise DataError(f"{names} have inconsistent lengths: {len(a)} vs {len(b)}")


def check_n_features(X: np.ndarray, expected: int, name: str = "X") -> None:
    if X.shape[1] != expected:
        raise DataError(f"{name} has {X.shape[1]} features, model expects {expected}")
