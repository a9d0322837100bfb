"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or as a script.
"""
import json
import math
import time
import warnings

import numpy as np
import pytest
from conftest import record_acceptance

from _oracles import brute_force_paths, simplex_grid
from midlstm.cli import main as cli_main
from midlstm.data import apply_normalization, make_windows, minmax_normalize
from midlstm.fusion import FusionDataset, design_matrix, fit_fusion, volume_feature
from midlstm.hmm import REGIME_LABELS, GaussianHmm, baum_welch, state_labels, viterbi
from midlstm.lstm import forward, init_network, mse_loss, backward
from midlstm.metrics import (
    PredictionPanel,
    cumulative_return,
    log_returns,
    midterm_mean_mpa,
    mpa,
    trend_accuracy,
)
from midlstm.model import MidLSTM
from midlstm.portfolio import (
    ReturnPanel,
    max_sharpe,
    min_variance,
    portfolio_variance,
    sharpe_ratio,
)
from midlstm.synth import SynthConfig, generate_factor_market, generate_sine_noise, sine_trend

# -- criterion 7 setup -------------------------------------------------------
FACTOR_MARKET = SynthConfig(days=1000, period=250.0, noise_std=0.06, n_stocks=20, seed=2024)
FACTOR_MODEL = dict(split_fraction=0.58, hidden_dims=(32, 32, 16), epochs=30, fusion_stride=5)
TOP_LOADINGS = 5


# -- 1 ---------------------------------------------------------------------

def _grad_check(hidden, T, seed, training):
    net = init_network(3, hidden, 3, dropout_rate=0.3 if training else 0.0,
                       dropout_after=(0,), seed=seed)
    rng = np.random.default_rng(seed + 100)
    seq, target = rng.normal(size=(T, 2, 3)), rng.normal(size=(T, 2, 3))

    def loss(params):
        _, tape = forward(seq, net.with_parameters(params), training,
                          np.random.default_rng(seed))
        return mse_loss(tape, target), tape

    params = net.parameters()
    _, tape = loss(params)
    grads = backward(tape, target)
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += 1e-5
            minus[k][idx] -= 1e-5
            fd = (loss(plus)[0] - loss(minus)[0]) / 2e-5
            a = grads[k][idx]
            excess = abs(a - fd) / max(1e-4 * max(abs(a), abs(fd)), 1e-7)
            worst = max(worst, excess)
    return worst


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    worst = 0.0
    cases = [((1,), 1), ((4,), 5), ((4, 4), 5), ((2, 3), 3), ((4, 4), 1), ((3,), 4)]
    for i, (hidden, T) in enumerate(cases):
        for training in (False, True):
            worst = max(worst, _grad_check(hidden, T, i, training))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and elapsed < 30
    record_acceptance(1, ok, f"worst error / tolerance = {worst:.3g}, {elapsed:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------

def test_criterion_2_sine_reproduction():
    t0 = time.perf_counter()
    cfg = SynthConfig()  # 600 days, A=1, period 120, offset 2, sigma 0.05
    table = generate_sine_noise(cfg)
    price, market, volume = table.close[:, 0], table.market, table.volume[:, 0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = MidLSTM(split_fraction=0.8, seed=0).fit(price, market, volume)
        ctx, _, starts = model.test_windows(price, market, volume)
        fc = model.forecast(ctx)
    clean = sine_trend(cfg)[starts[:, None] + np.arange(60)]
    rmse = float(np.sqrt(np.mean((fc.mid_lstm - clean) ** 2)))
    elapsed = time.perf_counter() - t0
    ok = rmse <= 2 * cfg.noise_std and elapsed < 300
    record_acceptance(2, ok, f"RMSE vs noiseless sine = {rmse:.4f} (limit 0.10) over "
                             f"{len(starts)} window(s), {elapsed:.0f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------

def _hmm_test_windows():
    """(price, log volume) test windows from the factor market and the sine stock."""
    out = []
    for table in (generate_factor_market(FACTOR_MARKET), generate_sine_noise(SynthConfig())):
        split = FACTOR_MODEL["split_fraction"] if table.close.shape[1] > 1 else 0.8
        for j in range(table.close.shape[1]):
            x = table.close[:, j]
            n_train = int(round(len(x) * split))
            p = apply_normalization(x, minmax_normalize(x[:n_train])[1])
            obs = np.column_stack([p, volume_feature(table.volume[:, j])])
            _, test = make_windows(obs, 60, split)
            out.extend(test.segments)
    return out


def _planted_quadrants(rng, T=1200):
    quad = np.array([[0.8, 14.5], [0.2, 14.5], [0.8, 12.5], [0.2, 12.5]])  # (price, volume)
    labels = np.array([REGIME_LABELS.index(n) for n in
                       ("high-volume/high-price", "high-volume/low-price",
                        "low-volume/high-price", "low-volume/low-price")])
    s = np.empty(T, dtype=int)
    s[0] = 0
    for t in range(1, T):
        s[t] = s[t - 1] if rng.random() < 0.95 else rng.integers(4)
    obs = quad[s] + rng.normal(size=(T, 2)) * [0.08, 0.3]
    return obs, labels[s]


def test_criterion_3_hmm():
    rng = np.random.default_rng(0)
    windows = _hmm_test_windows()
    worst_drop = 0.0
    for w in windows:
        ll = np.array(baum_welch(w, K=4, iterations=10).log_likelihoods)
        worst_drop = max(worst_drop, float(np.max(-np.diff(ll))))
    ok_a = worst_drop <= 1e-8

    mismatches = 0
    for trial in range(1000):
        K, T = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        pi = rng.dirichlet(np.ones(K))
        A = rng.dirichlet(np.ones(K), size=K)
        m = GaussianHmm(pi, A, rng.normal(size=(K, 2)), rng.uniform(0.3, 2, (K, 2)))
        obs = rng.normal(size=(T, 2)) * 1.5
        paths = brute_force_paths(obs, pi, A, m.means, m.variances)
        best = max(lp for _, lp in paths)
        path = viterbi(obs, m)
        lp = next(v for p, v in paths if p == tuple(path))
        mismatches += not math.isclose(lp, best, rel_tol=1e-12, abs_tol=1e-9)
    ok_b = mismatches == 0

    obs, truth = _planted_quadrants(rng)
    model = baum_welch(obs, K=4, iterations=10)
    names = state_labels(model)
    decoded = np.array([REGIME_LABELS.index(names[s]) for s in viterbi(obs, model)])
    agreement = float(np.mean(decoded == truth))
    ok_c = agreement >= 0.9

    ok = ok_a and ok_b and ok_c
    record_acceptance(3, ok, f"(a) {len(windows)} windows, worst LL drop {worst_drop:.2e}; "
                             f"(b) {mismatches}/1000 Viterbi mismatches; "
                             f"(c) planted agreement {agreement:.3f}")
    assert ok


# -- 4 ---------------------------------------------------------------------

def test_criterion_4_fusion_recovery():
    rng = np.random.default_rng(42)
    plant = np.array([0.7, 0.2, 0.05, 0.01, 0.1])
    n_win, L = 12, 60
    x, m = rng.random(n_win * L), rng.random(n_win * L)
    rho = np.repeat(rng.uniform(-1, 1, n_win), L)
    s = rng.integers(0, 4, n_win * L).astype(float)
    X = design_matrix(x, m, rho, s)
    y = X @ plant
    w = fit_fusion(FusionDataset(x, m, rho, s, y))
    err = float(np.max(np.abs(w.coefficients - plant)))
    ortho = float(np.max(np.abs(X.T @ (y - X @ w.coefficients))))
    ok = err <= 1e-6 and ortho <= 1e-8
    record_acceptance(4, ok, f"max coefficient error {err:.2e}, max |X'r| {ortho:.2e}")
    assert ok


# -- 5 ---------------------------------------------------------------------

def _rand_panel(rng, n):
    R = rng.normal(size=(90, n)) * rng.uniform(0.005, 0.03, n) + rng.normal(size=(90, 1)) * 0.01
    return ReturnPanel(R + rng.uniform(-0.001, 0.003, n))


def test_criterion_5_portfolio_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_sharpe, worst_var = -np.inf, -np.inf
    for n, step in ((2, 0.01), (3, 0.01), (4, 0.02)):
        for _ in range(3):
            p = _rand_panel(rng, n)
            grid = list(simplex_grid(n, step))
            g_sharpe = max(sharpe_ratio(g, p) for g in grid)
            g_var = min(portfolio_variance(g, p) for g in grid)
            worst_sharpe = max(worst_sharpe, g_sharpe - sharpe_ratio(max_sharpe(p), p))
            worst_var = max(worst_var, portfolio_variance(min_variance(p), p) - g_var)
    # two assets with exactly zero sample covariance
    a = np.array([1, -1, 1, -1, 2, -2], float) * 0.01
    b = np.array([1, 1, -1, -1, 0, 0], float) * 0.02
    assert abs(np.cov(a, b)[0, 1]) < 1e-18
    v1, v2 = np.var(a, ddof=1), np.var(b, ddof=1)
    closed_err = abs(min_variance(ReturnPanel(np.column_stack([a, b])))[0] - v2 / (v1 + v2))
    elapsed = time.perf_counter() - t0
    ok = worst_sharpe <= 1e-3 and worst_var <= 1e-3 and closed_err <= 1e-6 and elapsed < 60
    record_acceptance(5, ok, f"grid Sharpe gap {worst_sharpe:.2e}, variance gap "
                             f"{worst_var:.2e}, closed form error {closed_err:.2e}, "
                             f"{elapsed:.1f}s")
    assert ok


# -- 6 ---------------------------------------------------------------------

def test_criterion_6_metric_hand_cases():
    def panel(real, pred, L=None):
        real, pred = np.asarray(real, float), np.asarray(pred, float)
        L = L or len(real)
        return PredictionPanel(real, pred, tuple(range(0, len(real), L)), L, min(30, L // 2))

    checks = []
    checks.append((mpa(panel([[100.0]], [[90.0]]), 0), 0.9))
    checks.append((mpa(panel([[100.0, 50.0, 200.0]], [[110.0, 45.0, 210.0]]), 0),
                   1 - (0.1 + 0.1 + 0.05) / 3))
    checks.append((mpa(panel([[5.0, 6.0]], [[5.0, 6.0]]), 0), 1.0))
    real = np.full((120, 2), 50.0)
    checks.append((midterm_mean_mpa(panel(real, real * 1.07, 60)), 0.93))
    up = np.linspace(1, 2, 120)[:, None]
    mixed = up.copy()
    mixed[60:] = mixed[60:][::-1]
    checks.append((trend_accuracy(panel(up, mixed, 60)), 0.5))
    checks.append((trend_accuracy(panel(np.full((60, 1), 5.0), np.linspace(5, 6, 60)[:, None],
                                        60)), 1.0))
    checks.append((midterm_mean_mpa(panel(real, real, 60)), 1.0))
    checks.append((trend_accuracy(panel(up, up, 60)), 1.0))
    checks.append((float(np.max(np.abs(log_returns(np.full(5, 7.0))))), 0.0))
    checks.append((log_returns([100.0, 110.0])[0], math.log(1.1)))
    checks.append((log_returns([1.0, 2.0, 4.0])[1], math.log(2.0)))
    checks.append((cumulative_return([100.0, 110.0, 121.0]), (1 + math.log(1.1)) ** 2))
    checks.append((cumulative_return([3.0, 3.0, 3.0]), 1.0))
    checks.append((cumulative_return([3.0]), 1.0))
    worst = max(abs(a - b) for a, b in checks)
    ok = worst <= 1e-12
    record_acceptance(6, ok, f"{len(checks)} hand cases, worst error {worst:.1e}")
    assert ok


# -- 7 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_comparative():
    t0 = time.perf_counter()
    table = generate_factor_market(FACTOR_MARKET)
    preds = {k: [] for k in ("mid-lstm", "linear", "ridge")}
    reals = []
    for j in range(table.close.shape[1]):
        args = (table.close[:, j], table.market, table.volume[:, j])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = MidLSTM(seed=j, **FACTOR_MODEL).fit(*args)
            ctx, real, _ = model.test_windows(*args)
            fc = model.forecast(ctx)
        reals.append(real)
        for k in preds:
            preds[k].append(fc.methods()[k])
    real = np.stack(reals, axis=-1)
    top = list(np.argsort(FACTOR_MARKET.loadings())[-TOP_LOADINGS:])

    def score(method, cols=None):
        pred = np.stack(preds[method], axis=-1)
        if cols is not None:
            return midterm_mean_mpa(PredictionPanel.from_windows(real[..., cols],
                                                                 pred[..., cols]))
        return midterm_mean_mpa(PredictionPanel.from_windows(real, pred))

    s_all = {k: score(k) for k in preds}
    s_top = {k: score(k, top) for k in preds}
    margin_all = s_all["mid-lstm"] - max(s_all["linear"], s_all["ridge"])
    margin_top = s_top["mid-lstm"] - max(s_top["linear"], s_top["ridge"])
    elapsed = time.perf_counter() - t0
    ok = margin_all >= 0 and margin_top > margin_all and elapsed < 900
    detail = ("midterm MPA all: " + ", ".join(f"{k} {v:.4f}" for k, v in s_all.items())
              + "; top-5 loadings: " + ", ".join(f"{k} {v:.4f}" for k, v in s_top.items())
              + f"; margins {margin_all:+.4f} / {margin_top:+.4f}; {elapsed:.0f}s")
    record_acceptance(7, ok, detail)
    assert ok


# -- 8 ---------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    cfg = {
        "data": {"synth": {"kind": "factor", "days": 400, "n_stocks": 4, "period": 120}},
        "window_length": 30, "split_fraction": 0.6,
        "lstm": {"hidden_dims": [6, 4], "dropout_after": [0], "epochs": 2},
        "portfolio": {"threshold": 1.0, "frontier_samples": 50, "restarts": 4},
        "seed": 11,
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    blobs = []
    for k, jobs in enumerate(("1", "2")):
        out = tmp_path / f"run{k}"
        assert cli_main(["all", "--config", str(path), "--out", str(out), "--jobs", jobs]) == 0
        blobs.append((out / "metrics.json").read_bytes())
    ok = blobs[0] == blobs[1]
    record_acceptance(8, ok, f"metrics.json {len(blobs[0])} bytes, identical across runs "
                             f"with 1 and 2 workers" if ok else "metrics.json differs")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
