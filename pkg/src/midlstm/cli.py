"""Command-line pipeline: synth, train, predict, evaluate, allocate, backtest, report.

Every stage reads the artifacts of the previous one from the output
directory, so ``all`` and the stages run one after another write the same
files.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import synth
from .config import RunConfig, load_config
from .data import CsvSchema, PriceTable, load_price_table
from .errors import ConfigError, MidLSTMError, SeriesTooShort
from .metrics import PredictionPanel, midterm_mean_mpa, mpa_series, trend_accuracy
from .model import MidLSTM
from .portfolio import (
    BacktestConfig,
    ReturnPanel,
    backtest,
    frontier_samples,
    max_sharpe,
    min_variance,
    select_assets,
)

logger = logging.getLogger("midlstm")

METHODS = ("mid-lstm", "lstm", "linear", "ridge")
FLOAT_FORMAT = "%.17g"


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the earlier stage first")
    return json.loads(path.read_text())


# -- data ------------------------------------------------------------------

def _synth_table(config: RunConfig) -> PriceTable:
    s = config.data.synth
    params = s.model_dump(exclude={"kind"})
    if params["market_loading"] is not None:
        params["market_loading"] = tuple(params["market_loading"])
    cfg = synth.SynthConfig(seed=config.seed, market_ticker=config.data.market_ticker, **params)
    if s.kind == "sine":
        return synth.generate_sine_noise(cfg)
    return synth.generate_factor_market(cfg)


def _data_path(config: RunConfig, out: Path) -> Path:
    return Path(config.data.csv) if config.data.csv else out / "data.csv"


def _schema(config: RunConfig) -> CsvSchema:
    return CsvSchema(market_ticker=config.data.market_ticker, wide=config.data.wide)


def run_synth(config: RunConfig, out: Path) -> Path:
    if config.data.synth is None:
        raise ConfigError("data.synth: required by the synth stage")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "data.csv"
    _synth_table(config).to_csv(path)
    return path


def load_table(config: RunConfig, out: Path) -> PriceTable:
    path = _data_path(config, out)
    if config.data.csv is None and not path.exists():
        run_synth(config, out)
    table = load_price_table(path, _schema(config))
    if table.dropped:
        logger.warning("dropped tickers with missing days: %s", ", ".join(table.dropped))
    return table


# -- train / predict -------------------------------------------------------

def _train_one(args):
    ticker, j, price, market, volume, params = args
    params = dict(params, seed=params["seed"] + j)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = MidLSTM(**params).fit(price, market, volume)
    except SeriesTooShort as err:
        raise SeriesTooShort(f"stock {ticker}: {err}") from None
    except MidLSTMError as err:
        raise type(err)(f"stock {ticker}: {err}") from None
    return ticker, model.to_dict()


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _jobs(config: RunConfig) -> int:
    return config.jobs or os.cpu_count() or 1


def run_train(config: RunConfig, out: Path) -> list:
    table = load_table(config, out)
    items = [(t, j, table.close[:, j], table.market, table.volume[:, j], config.model_params())
             for j, t in enumerate(table.tickers)]
    for ticker, ckpt in _pool_map(_train_one, items, _jobs(config)):
        _dump_json(out / ticker / "model.json", ckpt)
        logger.info("trained %s", ticker)
    return list(table.tickers)


def _load_model(out: Path, ticker: str) -> MidLSTM:
    return MidLSTM.from_dict(_load_json(out / ticker / "model.json"))


def run_predict(config: RunConfig, out: Path) -> Path:
    table = load_table(config, out)
    frames = []
    for j, ticker in enumerate(table.tickers):
        model = _load_model(out, ticker)
        ctx, real, starts = model.test_windows(table.close[:, j], table.market,
                                               table.volume[:, j])
        fc = model.forecast(ctx)
        L = model.window_length
        W = len(starts)
        dates = np.array(table.dates)[starts[:, None] + np.arange(L)[None, :]]
        for method, pred in fc.methods().items():
            frames.append(pd.DataFrame({
                "date": dates.ravel(),
                "ticker": ticker,
                "method": method,
                "window": np.repeat(np.arange(1, W + 1), L),
                "day": np.tile(np.arange(L), W),
                "predicted": pred.ravel(),
                "real": real.ravel(),
                "state": fc.states.ravel(),
            }))
    path = out / "predictions.csv"
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


# -- evaluate --------------------------------------------------------------

def _load_predictions(out: Path) -> pd.DataFrame:
    path = out / "predictions.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run predict first")
    return pd.read_csv(path, dtype={"ticker": str, "date": str})


def _cube(frame: pd.DataFrame, method: str, column: str, tickers: list) -> np.ndarray:
    """``[window, day, stock]`` array of one column for one method."""
    sub = frame[frame["method"] == method]
    W, L = int(sub["window"].max()), int(sub["day"].max()) + 1
    cube = np.empty((W, L, len(tickers)))
    for j, t in enumerate(tickers):
        rows = sub[sub["ticker"] == t].sort_values(["window", "day"])
        cube[:, :, j] = rows[column].to_numpy().reshape(W, L)
    return cube


def _tickers(frame: pd.DataFrame) -> list:
    return list(dict.fromkeys(frame["ticker"]))


def _correlations(out: Path, tickers: list) -> dict:
    return {t: _load_json(out / t / "model.json")["train_correlation"] for t in tickers}


def _hc_tickers(correlations: dict, count: int) -> list:
    order = list(correlations)
    ranked = sorted(order, key=lambda t: (-correlations[t], order.index(t)))
    keep = set(ranked[:count])
    return [t for t in order if t in keep]


def _scores(real, pred, midterm_start: int) -> dict:
    panel = PredictionPanel.from_windows(real, pred, midterm_start)
    return {"mean_mpa": float(mpa_series(panel).mean()),
            "midterm_mean_mpa": midterm_mean_mpa(panel),
            "ta": trend_accuracy(panel)}


def run_evaluate(config: RunConfig, out: Path) -> dict:
    frame = _load_predictions(out)
    tickers = _tickers(frame)
    hc = _hc_tickers(_correlations(out, tickers), config.portfolio.hc_count)
    hc_idx = [tickers.index(t) for t in hc]
    metrics, daily = {"methods": {}, "hc_tickers": hc}, {}
    for method in METHODS:
        real = _cube(frame, method, "real", tickers)
        pred = _cube(frame, method, "predicted", tickers)
        m0 = config.window_length // 2
        entry = _scores(real, pred, m0)
        hc_scores = _scores(real[..., hc_idx], pred[..., hc_idx], m0)
        entry.update({f"hc_{k}": v for k, v in hc_scores.items()})
        entry["per_stock_midterm_mpa"] = {
            t: midterm_mean_mpa(PredictionPanel.from_windows(real[..., j], pred[..., j], m0))
            for j, t in enumerate(tickers)}
        metrics["methods"][method] = entry
        daily[method] = mpa_series(PredictionPanel.from_windows(real, pred))
    _dump_json(out / "metrics.json", metrics)
    W, L = real.shape[:2]
    pd.DataFrame({"window": np.repeat(np.arange(1, W + 1), L), "day": np.tile(np.arange(L), W),
                  **{m: v for m, v in daily.items()}}).to_csv(
        out / "mpa_daily.csv", index=False, float_format=FLOAT_FORMAT)
    return metrics


# -- allocate / backtest ---------------------------------------------------

def _backtest_inputs(config: RunConfig, out: Path):
    frame = _load_predictions(out)
    tickers = _tickers(frame)
    p = config.portfolio
    pred = _cube(frame, p.method, "predicted", tickers)
    real = _cube(frame, p.method, "real", tickers)
    short = (_cube(frame, p.short_term_method, "predicted", tickers)
             if p.short_term_method else None)
    return tickers, pred, real, short, _correlations(out, tickers)


def _backtest_config(config: RunConfig) -> BacktestConfig:
    p = config.portfolio
    return BacktestConfig(mode=p.mode, threshold=p.threshold, risk_free=p.risk_free,
                          return_kind=p.return_kind, hc_count=p.hc_count,
                          restarts=p.restarts, seed=config.seed,
                          midterm_start=config.window_length // 2,
                          window_length=config.window_length)


def run_allocate(config: RunConfig, out: Path) -> dict:
    tickers, pred, _, short, corr = _backtest_inputs(config, out)
    bt = _backtest_config(config)
    if short is not None:
        pred = pred.copy()
        pred[:, :bt.midterm_start] = short[:, :bt.midterm_start]
    windows, frontier = [], []
    for k in range(len(pred)):
        paths = {t: pred[k, :, j] for j, t in enumerate(tickers)}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            chosen = select_assets(paths, bt.mode, bt.threshold, corr, bt.hc_count,
                                   bt.return_kind)
        entry = {"window": k + 1, "selected": chosen}
        if chosen:
            panel = ReturnPanel.from_prices(pred[k][:, [tickers.index(t) for t in chosen]])
            mv = min_variance(panel, bt.restarts, bt.seed)
            try:
                ms = max_sharpe(panel, bt.risk_free, bt.restarts, bt.seed)
            except MidLSTMError:
                ms = mv
            entry["mean_variance"] = dict(zip(chosen, ms.tolist()))
            entry["min_variance"] = dict(zip(chosen, mv.tolist()))
            if config.portfolio.frontier_samples and len(chosen) > 1:
                pts = frontier_samples(panel, config.portfolio.frontier_samples, bt.seed + k,
                                       bt.risk_free)
                frontier.append(pd.DataFrame({"window": k + 1, "volatility": pts[:, 0],
                                              "return": pts[:, 1], "sharpe": pts[:, 2]}))
        windows.append(entry)
    result = {"windows": windows}
    _dump_json(out / "allocations.json", result)
    cols = ["window", "volatility", "return", "sharpe"]
    (pd.concat(frontier, ignore_index=True) if frontier else pd.DataFrame(columns=cols)).to_csv(
        out / "frontier.csv", index=False, float_format=FLOAT_FORMAT)
    return result


def run_backtest(config: RunConfig, out: Path) -> dict:
    tickers, pred, real, short, corr = _backtest_inputs(config, out)
    report = backtest(pred, real, _backtest_config(config), tickers, short, corr)
    _dump_json(out / "backtest.json", report.to_dict())
    pd.DataFrame(report.table_rows()).to_csv(out / "backtest.csv", index=False,
                                              float_format=FLOAT_FORMAT)
    return report.to_dict()


# -- report ----------------------------------------------------------------

def run_report(config: RunConfig, out: Path) -> dict:
    metrics = _load_json(out / "metrics.json")
    tickers = list(next(iter(metrics["methods"].values()))["per_stock_midterm_mpa"])
    stocks = {}
    for t in tickers:
        ckpt = _load_json(out / t / "model.json")
        stocks[t] = {"fusion": ckpt["fusion"], "hmm_labels": ckpt["hmm_labels"],
                     "train_correlation": ckpt["train_correlation"]}
    summary = {m: {k: v for k, v in e.items() if k != "per_stock_midterm_mpa"}
               for m, e in metrics["methods"].items()}
    bt_path = out / "backtest.json"
    report = {"config": config.model_dump(exclude={"output_dir", "jobs"}),
              "metrics": summary, "stocks": stocks,
              "backtest": _load_json(bt_path)["averages"] if bt_path.exists() else None}
    _dump_json(out / "report.json", report)
    return report


def run_all(config: RunConfig, out: Path) -> None:
    if config.data.synth is not None and config.data.csv is None:
        run_synth(config, out)
    run_train(config, out)
    run_predict(config, out)
    run_evaluate(config, out)
    run_allocate(config, out)
    run_backtest(config, out)
    run_report(config, out)


STAGES = {"synth": run_synth, "train": run_train, "predict": run_predict,
          "evaluate": run_evaluate, "allocate": run_allocate, "backtest": run_backtest,
          "report": run_report, "all": run_all}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="midlstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--jobs", type=int, help="worker processes for per-stock training")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config).with_overrides(seed=args.seed, jobs=args.jobs,
                                                         output_dir=args.out)
        STAGES[args.command](config, Path(config.output_dir))
    except (MidLSTMError, FileNotFoundError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err).strip("'\"")}),
              file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
