"""Long-only portfolio construction on predicted returns and its realised backtest."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptySelection, ZeroVariancePortfolio
from .metrics import cumulative_return, log_returns

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
RISK_FREE = 0.015
SELECTION_MODES = {"all": 1.15, "hc": 1.05}


@dataclass(frozen=True)
class ReturnPanel:
    returns: np.ndarray  # [day, asset] daily log returns
    trading_days_per_year: int = TRADING_DAYS

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=np.float64)
        if r.ndim == 1:
            r = r[:, None]
        object.__setattr__(self, "returns", r)
        if len(r) < 2:
            raise ValueError("need at least two days of returns")
        if not np.all(np.isfinite(r)):
            raise ValueError("returns must be finite")

    @classmethod
    def from_prices(cls, prices, trading_days_per_year: int = TRADING_DAYS):
        return cls(log_returns(prices), trading_days_per_year)

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    @property
    def annual_mean(self) -> np.ndarray:
        return self.trading_days_per_year * self.returns.mean(axis=0)

    @property
    def annual_cov(self) -> np.ndarray:
        return self.trading_days_per_year * np.atleast_2d(np.cov(self.returns, rowvar=False))


def _weights(w, panel: ReturnPanel) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if len(w) != panel.n_assets:
        raise DimensionMismatch(f"{len(w)} weights for {panel.n_assets} assets")
    return w


def annualized_return(w, panel: ReturnPanel) -> float:
    return float(_weights(w, panel) @ panel.annual_mean)


def portfolio_variance(w, panel: ReturnPanel) -> float:
    w = _weights(w, panel)
    return float(max(w @ panel.annual_cov @ w, 0.0))


def sharpe_ratio(w, panel: ReturnPanel, risk_free: float = RISK_FREE) -> float:
    sd = np.sqrt(portfolio_variance(w, panel))
    if sd == 0:
        raise ZeroVariancePortfolio("portfolio has zero variance")
    return (annualized_return(w, panel) - risk_free) / sd


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum w = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    w = np.maximum(v - css[rho] / (rho + 1), 0.0)
    return w / w.sum()


@dataclass
class SolverResult:
    weights: np.ndarray
    objective: float
    iterations: int
    starts: list = field(default_factory=list)


def _projected_gradient(f, grad, w0, max_iter=5000, tol=1e-10):
    """Minimise ``f`` over the simplex with backtracking projected gradient.

    Stops when the gradient mapping norm drops below ``tol`` or when a step
    no longer lowers ``f``.
    """
    w, fw = w0, f(w0)
    step = 1.0
    eps = np.finfo(float).eps
    for it in range(1, max_iter + 1):
        g = grad(w)
        while True:
            cand = project_to_simplex(w - step * g)
            d = cand - w
            fc = f(cand)
            slack = 4 * eps * max(abs(fw), abs(fc))
            if fc <= fw + g @ d + (d @ d) / (2 * step) + slack or step < 1e-20:
                break
            step *= 0.5
        if fc >= fw:
            return w, fw, it
        w, fw = cand, fc
        if np.sqrt(d @ d) / step < tol:
            return w, fw, it
        step *= 2.0
    return w, fw, max_iter


def _starts(n, restarts, seed):
    rng = np.random.default_rng(seed)
    pts = [np.full(n, 1.0 / n)] + list(np.eye(n))
    pts += list(rng.dirichlet(np.ones(n), size=restarts))
    return pts


def _solve(f, grad, n, restarts, seed, max_iter):
    best = None
    starts = _starts(n, restarts, seed)
    for w0 in starts:
        w, fw, it = _projected_gradient(f, grad, w0, max_iter=max_iter)
        if best is None or fw < best.objective:
            best = SolverResult(w, fw, it)
    best.starts = starts
    return best


def max_sharpe(panel: ReturnPanel, risk_free: float = RISK_FREE, restarts: int = 20,
               seed: int = 0, max_iter: int = 5000) -> np.ndarray:
    """Long-only weights maximising annualised Sharpe ratio.

    Projected gradient ascent from the equal-weight point, every vertex and
    ``restarts`` Dirichlet draws; the best end point is returned.
    """
    n = panel.n_assets
    if n == 1:
        return np.ones(1)
    mu, C = panel.annual_mean, panel.annual_cov
    if not np.any(C):
        raise ZeroVariancePortfolio("covariance matrix is identically zero")
    floor = 1e-300

    def f(w):
        var = w @ C @ w
        return -(mu @ w - risk_free) / np.sqrt(max(var, floor))

    def grad(w):
        Cw = C @ w
        sd = np.sqrt(max(w @ Cw, floor))
        return -(mu / sd - (mu @ w - risk_free) * Cw / sd ** 3)

    res = _solve(f, grad, n, restarts, seed, max_iter)
    if res.weights @ C @ res.weights <= 1e-14:
        raise ZeroVariancePortfolio("maximum-Sharpe portfolio has zero variance")
    return res.weights


def min_variance(panel: ReturnPanel, restarts: int = 20, seed: int = 0,
                 max_iter: int = 5000) -> np.ndarray:
    n = panel.n_assets
    if n == 1:
        return np.ones(1)
    C = panel.annual_cov
    return _solve(lambda w: w @ C @ w, lambda w: 2.0 * (C @ w), n, restarts, seed,
                  max_iter).weights


def select_assets(predictions: dict, mode: str = "all", threshold: float | None = None,
                  correlations: dict | None = None, hc_count: int = 50,
                  kind: str = "log") -> list:
    """Tickers whose predicted cumulative return exceeds the mode threshold.

    ``mode="hc"`` first keeps the ``hc_count`` tickers with the highest
    ``correlations`` (stock vs. market over the training data).
    """
    if mode not in SELECTION_MODES:
        raise ValueError(f"mode must be one of {sorted(SELECTION_MODES)}")
    threshold = SELECTION_MODES[mode] if threshold is None else threshold
    pool = list(predictions)
    if mode == "hc":
        if correlations is None:
            raise ValueError("hc mode needs per-ticker market correlations")
        ranked = sorted(pool, key=lambda t: (-correlations[t], pool.index(t)))
        keep = set(ranked[:hc_count])
        pool = [t for t in pool if t in keep]
    chosen = [t for t in pool if cumulative_return(predictions[t], kind) > threshold]
    if not chosen:
        warnings.warn(f"no asset exceeds cumulative return {threshold}", EmptySelection,
                      stacklevel=2)
    return chosen


def frontier_samples(panel: ReturnPanel, n_samples: int = 2000, seed: int = 0,
                     risk_free: float = RISK_FREE) -> np.ndarray:
    """Random long-only portfolios as rows of (volatility, return, sharpe)."""
    rng = np.random.default_rng(seed)
    W = rng.dirichlet(np.ones(panel.n_assets), size=n_samples)
    ret = W @ panel.annual_mean
    vol = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", W, panel.annual_cov, W), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        sharpe = np.where(vol > 0, (ret - risk_free) / vol, np.nan)
    return np.column_stack([vol, ret, sharpe])


@dataclass
class BacktestConfig:
    mode: str = "all"
    threshold: float | None = None
    risk_free: float = RISK_FREE
    midterm_start: int = 30
    return_kind: str = "log"
    hc_count: int = 50
    restarts: int = 20
    seed: int = 0
    window_starts: tuple | None = None  # needed when realized is a PriceTable
    window_length: int = 60


@dataclass
class BacktestReport:
    windows: list
    averages: dict

    def to_dict(self) -> dict:
        return {"windows": self.windows, "averages": self.averages}

    def table_rows(self) -> list:
        """One row per (method, window) plus an average row, like the results tables."""
        rows = []
        for method in ("mean_variance", "min_variance"):
            for k, win in enumerate(self.windows, start=1):
                r = win[method]
                rows.append({"allocation": method, "window": f"R-{k}",
                             "window_return": r["window_return"],
                             "annualized_return": r["annualized_return"],
                             "sharpe": r["sharpe"]})
            rows.append({"allocation": method, "window": "Ave", **self.averages[method]})
        return rows


def _realized_windows(realized, tickers, config: BacktestConfig):
    if hasattr(realized, "close"):
        if config.window_starts is None:
            raise ValueError("window_starts required when realized is a PriceTable")
        cols = [realized.tickers.index(t) for t in tickers]
        L = config.window_length
        return np.stack([realized.close[s:s + L][:, cols] for s in config.window_starts])
    return np.asarray(realized, dtype=np.float64)


def _evaluate(w, real: np.ndarray, config: BacktestConfig) -> dict:
    if w is None:
        return {"window_return": 0.0, "cumulative_return": 1.0, "annualized_return": 0.0,
                "sharpe": None}
    panel = ReturnPanel.from_prices(real)
    daily = panel.returns @ w
    if config.return_kind == "log":
        cum = float(np.prod(1.0 + daily))
    else:
        cum = float(np.prod(1.0 + (np.exp(panel.returns) - 1.0) @ w))
    try:
        sharpe = sharpe_ratio(w, panel, config.risk_free)
    except ZeroVariancePortfolio:
        sharpe = None
    return {"window_return": cum - 1.0, "cumulative_return": cum,
            "annualized_return": annualized_return(w, panel), "sharpe": sharpe}


def backtest(predicted, realized, config: BacktestConfig | None = None, tickers=None,
             short_term=None, correlations=None) -> BacktestReport:
    """Select, allocate on predicted prices, and score on realised prices.

    ``predicted`` and ``short_term`` are ``[window, day, stock]`` price
    arrays. Days before ``config.midterm_start`` are taken from
    ``short_term`` when given. ``realized`` is a matching array or a
    :class:`~midlstm.data.PriceTable` (with ``config.window_starts``).
    """
    config = config or BacktestConfig()
    pred = np.asarray(predicted, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[..., None]
    W, L, S = pred.shape
    tickers = list(tickers) if tickers is not None else [f"A{j}" for j in range(S)]
    real = _realized_windows(realized, tickers, config)
    if real.ndim == 2:
        real = real[..., None]
    if real.shape != pred.shape:
        raise DimensionMismatch(f"predicted {pred.shape} vs realized {real.shape}")
    if short_term is not None:
        pred = pred.copy()
        m = config.midterm_start
        pred[:, :m] = np.asarray(short_term, dtype=np.float64).reshape(pred.shape)[:, :m]

    windows = []
    for k in range(W):
        paths = {t: pred[k, :, j] for j, t in enumerate(tickers)}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptySelection)
            chosen = select_assets(paths, config.mode, config.threshold, correlations,
                                   config.hc_count, config.return_kind)
        entry = {"window": k + 1, "selected": chosen}
        if not chosen:
            logger.info("window %d: empty selection, holding cash", k + 1)
        cols = [tickers.index(t) for t in chosen]
        allocations = {}
        if chosen:
            panel = ReturnPanel.from_prices(pred[k][:, cols])
            try:
                allocations["mean_variance"] = max_sharpe(panel, config.risk_free,
                                                          config.restarts, config.seed)
            except ZeroVariancePortfolio:
                allocations["mean_variance"] = min_variance(panel, config.restarts, config.seed)
                entry["mean_variance_fallback"] = "min_variance"
            allocations["min_variance"] = min_variance(panel, config.restarts, config.seed)
        for method in ("mean_variance", "min_variance"):
            w = allocations.get(method)
            res = _evaluate(w, real[k][:, cols] if chosen else None, config)
            res["weights"] = {} if w is None else {t: float(x) for t, x in zip(chosen, w)}
            entry[method] = res
        windows.append(entry)

    averages = {}
    for method in ("mean_variance", "min_variance"):
        vals = [w[method] for w in windows]
        sharpes = [v["sharpe"] for v in vals if v["sharpe"] is not None]
        averages[method] = {
            "window_return": float(np.mean([v["window_return"] for v in vals])),
            "annualized_return": float(np.mean([v["annualized_return"] for v in vals])),
            "sharpe": float(np.mean(sharpes)) if sharpes else None,
        }
    return BacktestReport(windows, averages)
