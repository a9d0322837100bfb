"""Price-table ingestion, min-max scaling and rolling-window decomposition."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_float_array, check_is_fitted
from .errors import (
    DegenerateRange,
    EmptyTable,
    MissingColumn,
    NonMonotoneDates,
    NonPositivePrice,
    SeriesTooShort,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 60
DEFAULT_SPLIT = 0.85


@dataclass(frozen=True)
class PriceTable:
    """Aligned close/volume panel plus the market index, indexed by trading day."""

    tickers: tuple
    dates: tuple
    close: np.ndarray  # [day, ticker]
    volume: np.ndarray  # [day, ticker]
    market: np.ndarray  # [day]
    market_ticker: str = "MARKET"
    dropped: tuple = ()

    def __post_init__(self):
        n_days, n_tick = len(self.dates), len(self.tickers)
        if n_days == 0 or n_tick == 0:
            raise EmptyTable("price table has no days or no tickers")
        if self.close.shape != (n_days, n_tick) or self.volume.shape != (n_days, n_tick):
            raise ValueError("close/volume shape does not match dates x tickers")
        if self.market.shape != (n_days,):
            raise ValueError("market series length does not match dates")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise NonMonotoneDates("dates must be strictly increasing")
        if np.any(self.close <= 0) or np.any(self.market <= 0):
            raise NonPositivePrice("close prices and market levels must be > 0")
        if np.any(self.volume < 0):
            raise ValueError("volumes must be non-negative")
        for arr in (self.close, self.volume, self.market):
            arr.setflags(write=False)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def column(self, ticker: str) -> tuple[np.ndarray, np.ndarray]:
        j = self.tickers.index(ticker)
        return self.close[:, j], self.volume[:, j]

    def to_long_frame(self) -> pd.DataFrame:
        """Long ``date,ticker,close,volume`` frame, market rows first on each day."""
        rows = []
        for i, d in enumerate(self.dates):
            rows.append((d, self.market_ticker, self.market[i], 0.0))
            for j, t in enumerate(self.tickers):
                rows.append((d, t, self.close[i, j], self.volume[i, j]))
        return pd.DataFrame(rows, columns=["date", "ticker", "close", "volume"])

    def to_csv(self, path) -> None:
        self.to_long_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class CsvSchema:
    date: str = "date"
    ticker: str = "ticker"
    close: str = "close"
    volume: str = "volume"
    market_ticker: str = "MARKET"
    wide: bool = False


def _read_long(frame: pd.DataFrame, schema: CsvSchema) -> pd.DataFrame:
    for col in (schema.date, schema.ticker, schema.close, schema.volume):
        if col not in frame.columns:
            raise MissingColumn(f"column {col!r} missing from input")
    dates = pd.to_datetime(frame[schema.date])
    if (dates.diff().dt.total_seconds().fillna(0) < 0).any():
        raise NonMonotoneDates("rows are not in chronological order")
    frame = frame.assign(**{schema.date: dates.dt.strftime("%Y-%m-%d")})
    if frame.duplicated([schema.date, schema.ticker]).any():
        raise NonMonotoneDates("duplicate (date, ticker) rows")
    return frame[[schema.date, schema.ticker, schema.close, schema.volume]].rename(
        columns={schema.date: "date", schema.ticker: "ticker",
                 schema.close: "close", schema.volume: "volume"}
    )


def _read_wide(frame: pd.DataFrame, schema: CsvSchema) -> pd.DataFrame:
    # wide layout: date column plus <ticker>_close / <ticker>_volume pairs
    if schema.date not in frame.columns:
        raise MissingColumn(f"column {schema.date!r} missing from input")
    dates = pd.to_datetime(frame[schema.date])
    if (dates.diff().dt.total_seconds().fillna(0) <= 0).iloc[1:].any():
        raise NonMonotoneDates("dates are not strictly increasing")
    dates = dates.dt.strftime("%Y-%m-%d")
    parts = []
    for col in frame.columns:
        if col == schema.date or not col.endswith("_close"):
            continue
        ticker = col[: -len("_close")]
        vol_col = f"{ticker}_volume"
        volume = frame[vol_col] if vol_col in frame.columns else 0.0
        if vol_col not in frame.columns and ticker != schema.market_ticker:
            raise MissingColumn(f"column {vol_col!r} missing from input")
        parts.append(pd.DataFrame({"date": dates, "ticker": ticker,
                                   "close": frame[col], "volume": volume}))
    if not parts:
        raise EmptyTable("no <ticker>_close columns found")
    return pd.concat(parts, ignore_index=True).dropna(subset=["close"])


def load_price_table(path, schema: CsvSchema | None = None) -> PriceTable:
    """Load a CSV into an aligned :class:`PriceTable`.

    The market ticker's dates define the calendar. Any stock missing a
    calendar day (or carrying a NaN there) is dropped; the dropped tickers
    are recorded on the returned table.
    """
    schema = schema or CsvSchema()
    frame = pd.read_csv(Path(path))
    if frame.empty:
        raise EmptyTable(f"{path} contains no rows")
    long = _read_wide(frame, schema) if schema.wide else _read_long(frame, schema)

    mkt = long[long["ticker"] == schema.market_ticker]
    if mkt.empty:
        raise MissingColumn(f"market ticker {schema.market_ticker!r} not present")
    calendar = list(mkt["date"])
    market = mkt["close"].to_numpy(dtype=float)
    if np.any(~np.isfinite(market)) or np.any(market <= 0):
        raise NonPositivePrice("market index levels must be positive")

    stocks = long[long["ticker"] != schema.market_ticker]
    close = stocks.pivot(index="date", columns="ticker", values="close").reindex(calendar)
    volume = stocks.pivot(index="date", columns="ticker", values="volume").reindex(calendar)
    tickers_all = sorted(close.columns)
    complete = [t for t in tickers_all
                if close[t].notna().all() and volume[t].notna().all()]
    dropped = tuple(t for t in tickers_all if t not in complete)
    if dropped:
        logger.info("dropped %d ticker(s) with gaps: %s", len(dropped), ", ".join(dropped))
    if not complete:
        raise EmptyTable("no ticker has a complete history")
    c = close[complete].to_numpy(dtype=float)
    if np.any(c <= 0):
        bad = [t for t in complete if (close[t] <= 0).any()]
        raise NonPositivePrice(f"non-positive close price for {', '.join(bad)}")
    return PriceTable(
        tickers=tuple(complete),
        dates=tuple(calendar),
        close=c,
        volume=volume[complete].to_numpy(dtype=float),
        market=market,
        market_ticker=schema.market_ticker,
        dropped=dropped,
    )


@dataclass(frozen=True)
class NormalizationParams:
    min_value: float
    max_value: float

    def __post_init__(self):
        if not self.max_value > self.min_value:
            raise DegenerateRange(
                f"max ({self.max_value}) must exceed min ({self.min_value})"
            )

    @property
    def span(self) -> float:
        return self.max_value - self.min_value


def minmax_normalize(series) -> tuple[np.ndarray, NormalizationParams]:
    x = as_float_array(series, ndim=1, name="series")
    if x.size == 0:
        raise ValueError("series is empty")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        raise DegenerateRange(f"series is constant ({lo})")
    params = NormalizationParams(lo, hi)
    return apply_normalization(x, params), params


def apply_normalization(series, params: NormalizationParams) -> np.ndarray:
    """Map with already-fitted bounds; values outside the fit range leave [0, 1]."""
    x = np.asarray(series, dtype=np.float64)
    return (x - params.min_value) / params.span


def denormalize(normalized, params: NormalizationParams) -> np.ndarray:
    return np.asarray(normalized, dtype=np.float64) * params.span + params.min_value


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Column-wise min-max scaler with an exact inverse.

    Unlike :class:`sklearn.preprocessing.MinMaxScaler` a constant column is an
    error rather than being silently mapped to zero.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        cols = X.reshape(len(X), -1)
        self.params_ = [minmax_normalize(cols[:, j])[1] for j in range(cols.shape[1])]
        self.n_features_in_ = cols.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        out = X.reshape(len(X), -1).copy()
        for j, p in enumerate(self.params_):
            out[:, j] = apply_normalization(out[:, j], p)
        return out.reshape(X.shape)

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        out = X.reshape(len(X), -1).copy()
        for j, p in enumerate(self.params_):
            out[:, j] = denormalize(out[:, j], p)
        return out.reshape(X.shape)


@dataclass(frozen=True)
class RollingWindowSet:
    """Window decomposition of one (possibly multi-channel) series.

    Training sets fill ``inputs``/``targets`` with one-step pairs. Test sets
    fill ``contexts``/``segments``: each segment is a full window to be
    predicted recursively from the ``window_length - 1`` real days before it.
    ``starts`` holds the source index of each target (training) or of each
    segment's first day (test).
    """

    window_length: int
    inputs: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 0)))
    targets: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    contexts: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 0)))
    segments: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 0)))
    starts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def windows(self) -> list:
        return list(zip(self.inputs, self.targets))

    @property
    def test_windows(self) -> list:
        return list(self.segments)

    def __len__(self) -> int:
        return len(self.starts)


def split_point(n_days: int, split_fraction: float = DEFAULT_SPLIT) -> int:
    if not 0 < split_fraction < 1:
        raise ValueError(f"split_fraction must be in (0, 1), got {split_fraction}")
    return int(round(n_days * split_fraction))


def make_windows(series, window_length: int = DEFAULT_WINDOW,
                 split_fraction: float = DEFAULT_SPLIT):
    """Split a series into one-step training pairs and full test windows.

    The training portion of length ``n`` gives ``n - window_length`` pairs of
    (``window_length - 1`` inputs, 1 target), advancing one day at a time.
    The test portion is cut into consecutive ``window_length`` blocks; the
    first block only serves as context, so ``test_len // window_length - 1``
    blocks are predicted.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    L = int(window_length)
    if L < 2:
        raise ValueError("window_length must be at least 2")
    n = len(x)
    if n < 2 * L:
        raise SeriesTooShort(f"series of {n} days is shorter than 2 x {L}")
    n_train = split_point(n, split_fraction)
    n_pairs = n_train - L
    n_test = (n - n_train) // L - 1
    if n_pairs < 1:
        raise SeriesTooShort(f"training portion of {n_train} days yields no {L}-day window")
    if n_test < 1:
        raise SeriesTooShort(
            f"test portion of {n - n_train} days yields no predicted {L}-day window"
        )

    idx = np.arange(n_pairs)[:, None] + np.arange(L - 1)[None, :]
    train = RollingWindowSet(
        window_length=L,
        inputs=x[idx],
        targets=x[np.arange(n_pairs) + L - 1],
        starts=np.arange(n_pairs) + L - 1,
    )
    seg_starts = n_train + L * np.arange(1, n_test + 1)
    ctx_idx = seg_starts[:, None] + np.arange(-(L - 1), 0)[None, :]
    seg_idx = seg_starts[:, None] + np.arange(L)[None, :]
    test = RollingWindowSet(
        window_length=L,
        contexts=x[ctx_idx],
        segments=x[seg_idx],
        starts=seg_starts,
    )
    return train, test
