"""Seeded synthetic markets for desk-scale experiments.

Randomness comes from :class:`SplitMix64` rather than numpy's generators so
that fixtures are defined by a short, fully documented algorithm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PriceTable

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014) with a 64-bit counter state.

    Output ``k`` (1-based) after seeding with ``s`` is ``mix(s + k * GOLDEN)``
    modulo 2**64, so blocks of outputs are generated with vectorised uint64
    arithmetic. ``split`` seeds an independent child from the next output.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_uint64(self, n: int | None = None):
        count = 1 if n is None else int(n)
        k = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * _GOLDEN
        self.state = (self.state + count * int(_GOLDEN)) & _MASK64
        out = _mix(z)
        return int(out[0]) if n is None else out

    def split(self) -> "SplitMix64":
        return SplitMix64(self.next_uint64())

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits."""
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, n: int, mean=0.0, std=1.0) -> np.ndarray:
        """Box-Muller pairs; consumes ``2 * ceil(n / 2)`` outputs."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))  # 1 - u lies in (0, 1]
        theta = 2.0 * np.pi * u[m:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return mean + std * z


def trading_dates(n_days: int, start: str = "2009-01-02") -> tuple:
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n_days), roll="forward")
    return tuple(days.astype(str).tolist())


@dataclass(frozen=True)
class SynthConfig:
    days: int = 600
    amplitude: float = 1.0
    period: float = 120.0
    level_offset: float = 2.0
    noise_std: float = 0.05
    seed: int = 0
    n_stocks: int = 20
    market_loading: tuple | None = None
    volume_base: float = 1e6
    regime_stickiness: float = 0.97
    market_drift: float = 0.0
    ticker: str = "SINE"
    market_ticker: str = "MARKET"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.level_offset <= self.amplitude:
            raise ValueError("level_offset must exceed amplitude to keep prices positive")
        if self.days < 2:
            raise ValueError("days must be at least 2")

    def loadings(self) -> np.ndarray:
        if self.market_loading is None:
            return 0.05 * np.arange(1, self.n_stocks + 1)
        loads = np.asarray(self.market_loading, dtype=np.float64)
        if loads.shape != (self.n_stocks,):
            raise ValueError("market_loading needs one entry per stock")
        return loads


def sine_trend(config: SynthConfig) -> np.ndarray:
    t = np.arange(config.days)
    return config.level_offset + config.amplitude * np.sin(2 * np.pi * t / config.period)


def _markov_regime(rng: SplitMix64, n: int, stay: float) -> np.ndarray:
    u = rng.uniform(n)
    regime = np.empty(n, dtype=int)
    regime[0] = int(u[0] < 0.5)
    for t in range(1, n):
        regime[t] = regime[t - 1] if u[t] < stay else 1 - regime[t - 1]
    return regime


def generate_sine_noise(config: SynthConfig | None = None) -> PriceTable:
    """One stock following offset + A sin(2 pi t / period) + white noise.

    Volume is high while the trend rises and low while it falls, which
    together with the price level plants four (volume, price) regimes. The
    market index is an independent geometric random walk.
    """
    config = config or SynthConfig()
    rng = SplitMix64(config.seed)
    price_rng, vol_rng, mkt_rng = rng.split(), rng.split(), rng.split()
    n = config.days
    t = np.arange(n)
    price = sine_trend(config) + price_rng.normal(n, std=config.noise_std)
    price = np.maximum(price, 1e-6)
    rising = np.cos(2 * np.pi * t / config.period) > 0
    volume = config.volume_base * np.exp(0.6 * np.where(rising, 1.0, -1.0)
                                         + vol_rng.normal(n, std=0.1))
    market = 100.0 * np.exp(np.cumsum(mkt_rng.normal(n, mean=2e-4, std=0.008)))
    return PriceTable(
        tickers=(config.ticker,),
        dates=trading_dates(n),
        close=price[:, None],
        volume=np.round(volume)[:, None],
        market=market,
        market_ticker=config.market_ticker,
    )


def market_log_trend(config: SynthConfig) -> np.ndarray:
    """Smooth log-level of the synthetic market index."""
    t = np.arange(config.days, dtype=np.float64)
    p = config.period
    return (np.log(100.0) + 0.25 * np.sin(2 * np.pi * t / p)
            + 0.1 * np.sin(2 * np.pi * t / (0.45 * p) + 1.0) + config.market_drift * t)


def generate_factor_market(config: SynthConfig | None = None) -> PriceTable:
    """Multi-stock market driven by one smooth factor.

    ``log X_l(t) = log x0_l + loading_l * (log M(t) - log M(0)) + e_l(t)`` with
    i.i.d. Gaussian ``e``. Volume switches between two sticky Markov regimes
    per stock.
    """
    config = config or SynthConfig(period=250.0, noise_std=0.02)
    rng = SplitMix64(config.seed)
    n, k = config.days, config.n_stocks
    loads = config.loadings()
    log_m = market_log_trend(config)
    market = np.exp(log_m)
    close = np.empty((n, k))
    volume = np.empty((n, k))
    for j in range(k):
        stock_rng = rng.split()
        x0 = 20.0 + 80.0 * stock_rng.uniform(1)[0]
        noise = stock_rng.normal(n, std=config.noise_std)
        close[:, j] = x0 * np.exp(loads[j] * (log_m - log_m[0]) + noise)
        regime = _markov_regime(stock_rng, n, config.regime_stickiness)
        volume[:, j] = np.round(config.volume_base
                                * np.exp(0.7 * regime + stock_rng.normal(n, std=0.15)))
    width = max(2, len(str(k - 1)))
    return PriceTable(
        tickers=tuple(f"S{j:0{width}d}" for j in range(k)),
        dates=trading_dates(n),
        close=close,
        volume=volume,
        market=market,
        market_ticker=config.market_ticker,
    )
