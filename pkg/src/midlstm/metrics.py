"""Prediction accuracy, trend accuracy and return measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonPositivePrice

MIDTERM_START = 30


@dataclass(frozen=True)
class PredictionPanel:
    """Real and predicted prices over the test windows, ``[day, stock]``.

    ``window_starts`` are the row indices where each window begins; every
    window spans ``window_length`` rows.
    """

    real: np.ndarray
    predicted: np.ndarray
    window_starts: tuple
    window_length: int = 60
    midterm_start: int = MIDTERM_START

    def __post_init__(self):
        real = np.atleast_2d(np.asarray(self.real, dtype=np.float64).T).T
        pred = np.atleast_2d(np.asarray(self.predicted, dtype=np.float64).T).T
        object.__setattr__(self, "real", real)
        object.__setattr__(self, "predicted", pred)
        if real.shape != pred.shape:
            raise DimensionMismatch(f"real {real.shape} vs predicted {pred.shape}")
        if np.any(real <= 0):
            raise NonPositivePrice("real prices must be positive")
        if any(s < 0 or s + self.window_length > len(real) for s in self.window_starts):
            raise DimensionMismatch("window extends past the panel")

    @classmethod
    def from_windows(cls, real, predicted, midterm_start: int = MIDTERM_START):
        """Build from ``[window, day, stock]`` (or ``[window, day]``) arrays."""
        real = np.asarray(real, dtype=np.float64)
        predicted = np.asarray(predicted, dtype=np.float64)
        if real.ndim == 2:
            real, predicted = real[..., None], predicted[..., None]
        W, L, S = real.shape
        return cls(real.reshape(W * L, S), predicted.reshape(W * L, S),
                   tuple(range(0, W * L, L)), L, midterm_start)

    @property
    def midterm_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.real), dtype=bool)
        for s in self.window_starts:
            mask[s + self.midterm_start:s + self.window_length] = True
        return mask

    def subset(self, columns) -> "PredictionPanel":
        cols = list(columns)
        return PredictionPanel(self.real[:, cols], self.predicted[:, cols], self.window_starts,
                               self.window_length, self.midterm_start)


def mpa(panel: PredictionPanel, day: int) -> float:
    """One minus the mean relative absolute error across stocks on ``day``."""
    x, xh = panel.real[day], panel.predicted[day]
    return float(1.0 - np.mean(np.abs(x - xh) / x))


def mpa_series(panel: PredictionPanel) -> np.ndarray:
    rel = np.abs(panel.real - panel.predicted) / panel.real
    return 1.0 - rel.mean(axis=1)


def midterm_mean_mpa(panel: PredictionPanel) -> float:
    """Mean daily MPA over days ``midterm_start..window_length-1`` of every window."""
    return float(mpa_series(panel)[panel.midterm_mask].mean())


def trend_flags(panel: PredictionPanel) -> np.ndarray:
    """``[window, stock]`` agreement of first-to-last-day direction.

    Comparisons are inclusive, so a flat real or predicted path agrees with
    either direction of the other.
    """
    flags = []
    last = panel.window_length - 1
    for s in panel.window_starts:
        x0, x1 = panel.real[s], panel.real[s + last]
        p0, p1 = panel.predicted[s], panel.predicted[s + last]
        up = (p0 <= p1) & (x0 <= x1)
        down = (p0 >= p1) & (x0 >= x1)
        flags.append((up | down).astype(np.float64))
    return np.array(flags)


def trend_accuracy(panel: PredictionPanel) -> float:
    """Mean over windows of the per-window fraction of stocks with matching trend."""
    return float(trend_flags(panel).mean(axis=1).mean())


def _positive_prices(prices) -> np.ndarray:
    x = np.asarray(prices, dtype=np.float64)
    if np.any(x <= 0):
        raise NonPositivePrice("prices must be positive")
    return x


def log_returns(prices) -> np.ndarray:
    """``ln(x[t+1] / x[t])`` along the first axis."""
    x = _positive_prices(prices)
    if len(x) < 2:
        raise ValueError("need at least two prices")
    return np.diff(np.log(x), axis=0)


def simple_returns(prices) -> np.ndarray:
    x = _positive_prices(prices)
    return x[1:] / x[:-1] - 1.0


def cumulative_return(prices, kind: str = "log") -> float:
    """Product of ``1 + R`` over consecutive days.

    With ``kind="log"`` the per-day ``R`` is the log return, which is the
    default measure used for asset selection. ``kind="simple"`` gives the
    ordinary compounded return ``x[-1] / x[0]``.
    """
    x = _positive_prices(prices)
    if len(x) < 2:
        return 1.0
    r = np.diff(np.log(x)) if kind == "log" else simple_returns(x)
    if kind not in ("log", "simple"):
        raise ValueError(f"unknown return kind {kind!r}")
    return float(np.prod(1.0 + r))
