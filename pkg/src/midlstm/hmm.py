"""Hidden Markov model with diagonal-Gaussian emissions.

Used to tag each day with a (volume, price) regime. Observations are rows of
``(normalized price, volume feature)``; nothing below assumes exactly two
columns except :func:`state_labels`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from ._validation import as_float_array, check_is_fitted
from .errors import InsufficientData, StateDegenerate, WrongStateCount

VARIANCE_FLOOR = 1e-6

REGIME_LABELS = (
    "high-volume/high-price",
    "high-volume/low-price",
    "low-volume/high-price",
    "low-volume/low-price",
)
# (volume sign, price sign) for each label above
_QUADRANT_SIGNS = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64)


@dataclass
class GaussianHmm:
    initial: np.ndarray  # (K,)
    transition: np.ndarray  # (K, K), rows sum to one
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    variance_floor: float = VARIANCE_FLOOR
    log_likelihoods: list = field(default_factory=list)

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        K = len(self.initial)
        if self.transition.shape != (K, K) or self.means.shape[0] != K \
                or self.variances.shape != self.means.shape:
            raise ValueError("HMM parameter shapes are inconsistent")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1) > 1e-10:
            raise ValueError("initial distribution must be a probability vector")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(1) - 1) > 1e-10):
            raise ValueError("transition rows must be probability vectors")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_states(self) -> int:
        return len(self.initial)

    def log_emissions(self, obs) -> np.ndarray:
        """``(T, K)`` log densities of each observation under each state."""
        x = np.asarray(obs, dtype=np.float64)
        diff = x[:, None, :] - self.means[None]
        return -0.5 * np.sum(diff * diff / self.variances + np.log(2 * np.pi * self.variances),
                             axis=2)

    def permuted(self, order) -> "GaussianHmm":
        order = np.asarray(order)
        return GaussianHmm(self.initial[order], self.transition[np.ix_(order, order)],
                           self.means[order], self.variances[order], self.variance_floor)

    def to_dict(self) -> dict:
        return {"initial": self.initial.tolist(), "transition": self.transition.tolist(),
                "means": self.means.tolist(), "variances": self.variances.tolist(),
                "variance_floor": self.variance_floor,
                "log_likelihoods": list(self.log_likelihoods)}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianHmm":
        return cls(np.array(d["initial"]), np.array(d["transition"]), np.array(d["means"]),
                   np.array(d["variances"]), d.get("variance_floor", VARIANCE_FLOOR),
                   list(d.get("log_likelihoods", [])))


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def _forward_backward(log_b, log_pi, log_A):
    T, K = log_b.shape
    log_alpha = np.empty((T, K))
    log_beta = np.zeros((T, K))
    log_alpha[0] = log_pi + log_b[0]
    for t in range(1, T):
        log_alpha[t] = logsumexp(log_alpha[t - 1][:, None] + log_A, axis=0) + log_b[t]
    for t in range(T - 2, -1, -1):
        log_beta[t] = logsumexp(log_A + (log_b[t + 1] + log_beta[t + 1])[None, :], axis=1)
    return log_alpha, log_beta, float(logsumexp(log_alpha[-1]))


def forward_log_likelihood(obs, model: GaussianHmm) -> float:
    """log p(obs | model) by a log-space forward pass."""
    x = as_float_array(obs, name="observations")
    if x.ndim == 1:
        x = x[:, None]
    log_b = model.log_emissions(x)
    log_A = _log(model.transition)
    a = _log(model.initial) + log_b[0]
    for t in range(1, len(x)):
        a = logsumexp(a[:, None] + log_A, axis=0) + log_b[t]
    return float(logsumexp(a))


def _as_sequences(obs) -> list:
    if isinstance(obs, np.ndarray) and obs.ndim == 2:
        obs = [obs]
    seqs = []
    for s in obs:
        s = as_float_array(s, name="observations")
        seqs.append(s[:, None] if s.ndim == 1 else s)
    return seqs


def initial_model(sequences, K: int, variance_floor: float = VARIANCE_FLOOR) -> GaussianHmm:
    """Deterministic starting point from the pooled data.

    Means sit on per-dimension quantiles: a grid of levels when ``K`` is a
    perfect square (so K=4 starts one state per quadrant), otherwise the
    diagonal ``(k + 0.5) / K``. Transitions are uniform with 1e-3 added on
    the diagonal.
    """
    X = np.vstack(sequences)
    D = X.shape[1]
    m = math.isqrt(K)
    if m * m == K and D == 2 and K > 1:
        levels = (np.arange(m) + 0.5) / m
        q = [np.quantile(X[:, d], levels) for d in range(2)]
        means = np.array([[q[0][a], q[1][b]] for a in range(m) for b in range(m)])
    else:
        levels = (np.arange(K) + 0.5) / K
        means = np.stack([np.quantile(X[:, d], levels) for d in range(D)], axis=1)
    var = np.maximum(X.var(axis=0), variance_floor)
    A = np.full((K, K), 1.0 / K) + 1e-3 * np.eye(K)
    A /= A.sum(axis=1, keepdims=True)
    return GaussianHmm(np.full(K, 1.0 / K), A, means, np.tile(var, (K, 1)), variance_floor)


def baum_welch(obs, K: int = 4, iterations: int = 10, variance_floor: float = VARIANCE_FLOOR,
               init: GaussianHmm | None = None) -> GaussianHmm:
    """EM re-estimation over one or more observation sequences.

    ``log_likelihoods`` on the result holds the total log-likelihood before
    each iteration followed by the value for the returned parameters.
    """
    seqs = _as_sequences(obs)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if sum(len(s) for s in seqs) < K:
        raise InsufficientData(f"need at least {K} observations for {K} states")
    model = init or initial_model(seqs, K, variance_floor)
    history = []
    for _ in range(iterations):
        log_pi, log_A = _log(model.initial), _log(model.transition)
        pi_acc = np.zeros(K)
        xi_acc = np.zeros((K, K))
        from_acc = np.zeros(K)
        w_acc = np.zeros(K)
        x_acc = np.zeros_like(model.means)
        xx_acc = np.zeros_like(model.means)
        total = 0.0
        for x in seqs:
            log_b = model.log_emissions(x)
            la, lb, ll = _forward_backward(log_b, log_pi, log_A)
            total += ll
            gamma = np.exp(la + lb - ll)
            pi_acc += gamma[0]
            if len(x) > 1:
                log_xi = (la[:-1, :, None] + log_A[None] + (log_b[1:] + lb[1:])[:, None, :] - ll)
                xi_acc += np.exp(logsumexp(log_xi, axis=0))
                from_acc += gamma[:-1].sum(axis=0)
            w_acc += gamma.sum(axis=0)
            x_acc += gamma.T @ x
            xx_acc += gamma.T @ (x * x)
        history.append(total)

        initial = pi_acc / pi_acc.sum()
        transition = model.transition.copy()
        ok = from_acc > 0
        transition[ok] = xi_acc[ok] / xi_acc[ok].sum(axis=1, keepdims=True)
        means, variances = model.means.copy(), model.variances.copy()
        live = w_acc > 1e-300
        means[live] = x_acc[live] / w_acc[live, None]
        variances[live] = xx_acc[live] / w_acc[live, None] - means[live] ** 2
        variances = np.maximum(variances, variance_floor)
        model = GaussianHmm(initial, transition, means, variances, variance_floor)
    history.append(sum(forward_log_likelihood(x, model) for x in seqs))
    model.log_likelihoods = history
    return model


def viterbi(obs, model: GaussianHmm) -> np.ndarray:
    """Most probable state path; ties go to the lower state index."""
    x = as_float_array(obs, name="observations")
    if x.ndim == 1:
        x = x[:, None]
    log_b = model.log_emissions(x)
    log_A = _log(model.transition)
    T, K = log_b.shape
    delta = _log(model.initial) + log_b[0]
    back = np.zeros((T, K), dtype=int)
    for t in range(1, T):
        scores = delta[:, None] + log_A  # from-state x to-state
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(K)] + log_b[t]
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_log_probability(obs, path, model: GaussianHmm) -> float:
    """Joint log p(obs, path)."""
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    log_b = model.log_emissions(x)
    path = np.asarray(path)
    lp = _log(model.initial)[path[0]] + log_b[0, path[0]]
    lp += np.sum(_log(model.transition)[path[:-1], path[1:]])
    return float(lp + np.sum(log_b[np.arange(1, len(path)), path[1:]]))


def state_labels(model: GaussianHmm, price_col: int = 0, volume_col: int = 1) -> list:
    """Name each of the four states by its (volume, price) quadrant.

    State means are centred on the across-state median of each dimension and
    matched one-to-one to the quadrants by maximal sign agreement.
    """
    if model.n_states != 4:
        raise WrongStateCount(f"regime labels need K = 4, got {model.n_states}")
    pts = model.means[:, [volume_col, price_col]]
    dev = pts - np.median(pts, axis=0)
    if np.allclose(dev, 0):
        warnings.warn("all state means coincide; labelling by index", StateDegenerate,
                      stacklevel=2)
        return list(REGIME_LABELS)
    scale = np.abs(dev).max(axis=0)
    dev = dev / np.where(scale > 0, scale, 1.0)
    rows, cols = linear_sum_assignment(-(dev @ _QUADRANT_SIGNS.T))
    labels = [None] * 4
    for r, c in zip(rows, cols):
        labels[r] = REGIME_LABELS[c]
    return labels


class GaussianHMM(BaseEstimator):
    """Estimator front end for :func:`baum_welch` / :func:`viterbi`.

    ``fit`` accepts a single ``(T, D)`` array or a list of them.
    """

    def __init__(self, n_states=4, n_iter=10, variance_floor=VARIANCE_FLOOR):
        self.n_states = n_states
        self.n_iter = n_iter
        self.variance_floor = variance_floor

    def fit(self, X, y=None):
        self.model_ = baum_welch(X, self.n_states, self.n_iter, self.variance_floor)
        self.n_features_in_ = self.model_.means.shape[1]
        return self

    def score(self, X, y=None):
        check_is_fitted(self, "model_")
        return sum(forward_log_likelihood(s, self.model_) for s in _as_sequences(X))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return viterbi(X, self.model_)

    @property
    def labels_(self):
        check_is_fitted(self, "model_")
        return state_labels(self.model_)
