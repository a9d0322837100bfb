"""Linear fusion of the LSTM outputs with market correlation and HMM regime.

The refined price is

    alpha * x + lambda * rho * m + eta * rho + gamma * s + c

where ``x`` and ``m`` are the predicted (normalized) stock price and market
index, ``rho`` their correlation over the predicted window and ``s`` the
decoded hidden state.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import as_float_array, check_is_fitted, check_same_length
from .errors import DegenerateVector, DimensionMismatch, RankDeficient
from .hmm import GaussianHmm, viterbi

RIDGE_FALLBACK = 1e-8


def correlation(x, m) -> float:
    """Pearson correlation of two equal-length vectors."""
    x = as_float_array(x, ndim=1, name="x")
    m = as_float_array(m, ndim=1, name="m")
    check_same_length(x, m, names=["x", "m"])
    if len(x) < 2:
        raise DimensionMismatch("need at least two points")
    dx, dm = x - x.mean(), m - m.mean()
    sx, sm = np.sqrt(dx @ dx), np.sqrt(dm @ dm)
    if sx == 0 or sm == 0:
        raise DegenerateVector("correlation undefined for a constant vector")
    return float(np.clip((dx @ dm) / (sx * sm), -1.0, 1.0))


def market_beta(r, rm) -> float:
    """cov(r, rm) / var(rm)."""
    r = as_float_array(r, ndim=1, name="r")
    rm = as_float_array(rm, ndim=1, name="rm")
    check_same_length(r, rm, names=["r", "rm"])
    if len(r) < 2:
        raise DimensionMismatch("need at least two points")
    dm = rm - rm.mean()
    var = dm @ dm
    if var == 0:
        raise DegenerateVector("market returns are constant")
    return float(((r - r.mean()) @ dm) / var)


@dataclass(frozen=True)
class FusionDataset:
    price_pred: np.ndarray
    market_pred: np.ndarray
    rho: np.ndarray
    state: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self):
        cols = [self.price_pred, self.market_pred, self.rho, self.state]
        if self.target is not None:
            cols.append(self.target)
        check_same_length(*cols)

    def __len__(self):
        return len(self.price_pred)

    def regressors(self) -> np.ndarray:
        return np.column_stack([self.price_pred, self.market_pred, self.rho, self.state])

    @classmethod
    def concat(cls, parts) -> "FusionDataset":
        parts = list(parts)
        tgt = None if any(p.target is None for p in parts) else \
            np.concatenate([p.target for p in parts])
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("price_pred", "market_pred", "rho", "state")), target=tgt)


def volume_feature(volume, transform: str = "log1p") -> np.ndarray:
    v = np.asarray(volume, dtype=np.float64)
    if transform == "log1p":
        return np.log1p(np.maximum(v, 0.0))
    if transform == "raw":
        return v
    raise ValueError(f"unknown volume transform {transform!r}")


def window_rho(price_pred, market_pred) -> float:
    """Correlation of one predicted window; a flat prediction counts as 0."""
    try:
        return correlation(price_pred, market_pred)
    except DegenerateVector:
        return 0.0


def build_dataset(price_pred, market_pred, volume_pred, hmm: GaussianHmm, window_real=None,
                  volume_transform: str = "log1p") -> FusionDataset:
    """Assemble regressor rows for one or more predicted windows.

    Inputs are ``(L,)`` for one window or ``(W, L)`` for several. Prices and
    the market are normalized; ``volume_pred`` is in share counts and is
    turned into the HMM's volume feature here.
    """
    P = np.atleast_2d(np.asarray(price_pred, dtype=np.float64))
    M = np.atleast_2d(np.asarray(market_pred, dtype=np.float64))
    V = np.atleast_2d(np.asarray(volume_pred, dtype=np.float64))
    if P.shape != M.shape or P.shape != V.shape:
        raise DimensionMismatch("predicted price, market and volume windows must align")
    rho = np.repeat([window_rho(p, m) for p, m in zip(P, M)], P.shape[1])
    states = np.concatenate([
        viterbi(np.column_stack([p, volume_feature(v, volume_transform)]), hmm)
        for p, v in zip(P, V)
    ])
    target = None
    if window_real is not None:
        target = np.atleast_2d(np.asarray(window_real, dtype=np.float64))
        if target.shape != P.shape:
            raise DimensionMismatch("real windows must align with predictions")
        target = target.ravel()
    return FusionDataset(P.ravel(), M.ravel(), rho, states.astype(np.float64), target)


@dataclass(frozen=True)
class FusionWeights:
    alpha: float
    lambda_: float
    eta: float
    gamma: tuple
    c: float
    encoding: str = "index"
    rank_deficient: bool = False

    def __post_init__(self):
        vals = [self.alpha, self.lambda_, self.eta, self.c, *self.gamma]
        if not np.all(np.isfinite(vals)):
            raise ValueError("fusion weights must be finite")
        if (self.encoding == "index") != (len(self.gamma) == 1):
            raise ValueError("gamma length does not match the state encoding")

    @property
    def coefficients(self) -> np.ndarray:
        head = [self.alpha, self.lambda_, self.eta, *self.gamma]
        return np.array(head + [self.c] if self.encoding == "index" else head)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "lambda": self.lambda_, "eta": self.eta,
                "gamma": list(self.gamma), "c": self.c, "encoding": self.encoding,
                "rank_deficient": self.rank_deficient}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionWeights":
        return cls(d["alpha"], d["lambda"], d["eta"], tuple(d["gamma"]), d["c"],
                   d.get("encoding", "index"), d.get("rank_deficient", False))


def design_matrix(price_pred, market_pred, rho, state, encoding: str = "index",
                  n_states: int = 4) -> np.ndarray:
    x = np.asarray(price_pred, dtype=np.float64)
    m = np.asarray(market_pred, dtype=np.float64)
    r = np.asarray(rho, dtype=np.float64)
    s = np.asarray(state, dtype=np.float64)
    if encoding == "index":
        return np.column_stack([x, r * m, r, s, np.ones_like(x)])
    if encoding == "onehot":
        # per-state intercepts replace c, which would be collinear with them
        onehot = (s[:, None] == np.arange(n_states)[None, :]).astype(np.float64)
        return np.column_stack([x, r * m, r, onehot])
    raise ValueError(f"unknown state encoding {encoding!r}")


def fit_fusion(data: FusionDataset, encoding: str = "index", n_states: int = 4) -> FusionWeights:
    """Least-squares fit of the fusion coefficients.

    Falls back to a 1e-8 ridge (with a :class:`RankDeficient` warning) when
    the design matrix is singular, e.g. when every row shares one ``rho``.
    """
    if data.target is None:
        raise ValueError("dataset has no target column")
    X = design_matrix(data.price_pred, data.market_pred, data.rho, data.state, encoding,
                      n_states)
    y = data.target
    if len(y) < X.shape[1]:
        raise DimensionMismatch(f"{len(y)} rows cannot determine {X.shape[1]} coefficients")
    deficient = bool(np.linalg.matrix_rank(X) < X.shape[1])
    if deficient:
        warnings.warn("fusion design matrix is rank deficient; using ridge fallback",
                      RankDeficient, stacklevel=2)
        coef = np.linalg.solve(X.T @ X + RIDGE_FALLBACK * np.eye(X.shape[1]), X.T @ y)
    else:
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
    coef = [float(v) for v in coef]
    if encoding == "index":
        return FusionWeights(coef[0], coef[1], coef[2], (coef[3],), coef[4], encoding, deficient)
    return FusionWeights(coef[0], coef[1], coef[2], tuple(coef[3:]), 0.0, encoding, deficient)


def refine_prediction(price_pred, market_pred, rho, state, weights: FusionWeights):
    """Evaluate the fusion model; scalars in, scalar out, or elementwise on arrays."""
    scalar = np.ndim(price_pred) == 0
    X = design_matrix(np.atleast_1d(price_pred), np.atleast_1d(market_pred),
                      np.broadcast_to(rho, np.shape(np.atleast_1d(price_pred))),
                      np.broadcast_to(state, np.shape(np.atleast_1d(price_pred))),
                      weights.encoding, len(weights.gamma))
    out = X @ weights.coefficients
    return float(out[0]) if scalar else out


class MidArmaFusion(RegressorMixin, BaseEstimator):
    """``X`` columns: predicted price, predicted market, rho, state."""

    def __init__(self, state_encoding="index", n_states=4):
        self.state_encoding = state_encoding
        self.n_states = n_states

    def fit(self, X, y):
        X = as_float_array(X, ndim=2, name="X")
        if X.shape[1] != 4:
            raise DimensionMismatch("expected columns (price, market, rho, state)")
        data = FusionDataset(*X.T, target=as_float_array(y, ndim=1, name="y"))
        self.weights_ = fit_fusion(data, self.state_encoding, self.n_states)
        self.coef_ = self.weights_.coefficients
        self.n_features_in_ = 4
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = as_float_array(X, ndim=2, name="X")
        return refine_prediction(*X.T, self.weights_)
