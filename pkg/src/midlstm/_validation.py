"""Small input-validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotFittedError


def as_float_array(x, *, ndim: int | None = None, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_length(*arrays, names=None) -> int:
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) != 1:
        names = names or [f"arg{i}" for i in range(len(arrays))]
        detail = ", ".join(f"{n}={k}" for n, k in zip(names, lengths))
        raise DimensionMismatch(f"length mismatch: {detail}")
    return lengths[0]


def check_is_fitted(estimator, attributes) -> None:
    if isinstance(attributes, str):
        attributes = [attributes]
    if not all(getattr(estimator, a, None) is not None for a in attributes):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
