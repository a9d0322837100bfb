"""Linear and ridge autoregressive price predictors on the same windows."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import as_float_array, check_is_fitted
from .errors import InsufficientData, RankDeficient

MIN_PAIRS = 60


@dataclass(frozen=True)
class LinearAutoregressor:
    weights: np.ndarray  # oldest lag first, matching window order
    bias: float
    ridge_lambda: float = 0.0

    def __post_init__(self):
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    def predict(self, windows) -> np.ndarray:
        return np.asarray(windows, dtype=np.float64) @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias,
                "ridge_lambda": self.ridge_lambda}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearAutoregressor":
        return cls(np.array(d["weights"], dtype=np.float64), d["bias"], d["ridge_lambda"])


def _price_channel(windows):
    if hasattr(windows, "inputs"):
        X, y = windows.inputs, windows.targets
    else:
        X, y = windows
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, :, 0]
    if y.ndim == 2:
        y = y[:, 0]
    return X, y


def fit_autoregressor(windows, ridge_lambda: float = 1.0) -> LinearAutoregressor:
    """Minimise ``sum (y - w.x - b)^2 + ridge_lambda * |w|^2`` (bias unpenalised).

    ``windows`` is a training RollingWindowSet (price is channel 0) or an
    ``(inputs, targets)`` pair.
    """
    X, y = _price_channel(windows)
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    if len(X) < MIN_PAIRS:
        raise InsufficientData(f"need at least {MIN_PAIRS} training pairs, got {len(X)}")
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc, yc = X - x_mean, y - y_mean
    gram = Xc.T @ Xc
    lam = float(ridge_lambda)
    if lam == 0 and np.linalg.matrix_rank(Xc) < X.shape[1]:
        warnings.warn("lag matrix is rank deficient; using ridge fallback", RankDeficient,
                      stacklevel=2)
        lam = 1e-8
    w = np.linalg.solve(gram + lam * np.eye(X.shape[1]), Xc.T @ yc)
    return LinearAutoregressor(w, float(y_mean - x_mean @ w), float(ridge_lambda))


def predict_full_sequence_baseline(window, model: LinearAutoregressor, horizon: int = 60):
    """Recursive forecast; ``window`` is ``(T,)`` or ``(B, T)``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    W = np.array(window, dtype=np.float64, ndmin=1)
    single = W.ndim == 1
    W = np.atleast_2d(W)
    out = np.empty((W.shape[0], horizon))
    for k in range(horizon):
        nxt = model.predict(W)
        out[:, k] = nxt
        W = np.concatenate([W[:, 1:], nxt[:, None]], axis=1)
    return out[0] if single else out


class AutoregressiveRegressor(RegressorMixin, BaseEstimator):
    """``ridge_lambda=0`` gives ordinary least squares."""

    def __init__(self, ridge_lambda=1.0):
        self.ridge_lambda = ridge_lambda

    def fit(self, X, y):
        self.model_ = fit_autoregressor((as_float_array(X, name="X"),
                                         as_float_array(y, name="y")), self.ridge_lambda)
        self.coef_, self.intercept_ = self.model_.weights, self.model_.bias
        self.n_features_in_ = len(self.coef_)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)

    def predict_full_sequence(self, window, horizon=60):
        check_is_fitted(self, "model_")
        return predict_full_sequence_baseline(window, self.model_, horizon)
