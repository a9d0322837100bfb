import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from midlstm.errors import DimensionMismatch, NonPositivePrice
from midlstm.metrics import (
    PredictionPanel,
    cumulative_return,
    log_returns,
    midterm_mean_mpa,
    mpa,
    mpa_series,
    simple_returns,
    trend_accuracy,
    trend_flags,
)


def _panel(real, pred, L=None):
    real, pred = np.asarray(real, float), np.asarray(pred, float)
    L = L or len(real)
    return PredictionPanel(real, pred, tuple(range(0, len(real), L)), L, min(30, L // 2))


def test_mpa_examples():
    assert mpa(_panel([[100.0]], [[100.0]]), 0) == 1.0
    assert mpa(_panel([[100.0]], [[90.0]]), 0) == pytest.approx(0.9, abs=1e-12)
    p = _panel([[100.0, 50.0, 200.0]], [[110.0, 45.0, 210.0]])
    assert mpa(p, 0) == pytest.approx(1 - (0.1 + 0.1 + 0.05) / 3, abs=1e-12)


def test_mpa_can_go_negative():
    assert mpa(_panel([[10.0]], [[35.0]]), 0) == pytest.approx(-1.5, abs=1e-12)


@given(st.floats(0.0, 50.0), st.floats(1e-9, 50.0))
def test_mpa_strictly_decreasing_in_error(e1, step):
    e2 = e1 + step
    lo, hi = sorted((e1, e2))
    a = mpa(_panel([[100.0, 80.0]], [[100.0 + lo, 80.0]]), 0)
    b = mpa(_panel([[100.0, 80.0]], [[100.0 + hi, 80.0]]), 0)
    assert a > b
    assert (a == 1.0) == (100.0 + lo == 100.0)


def test_midterm_mean_examples():
    real = np.full((120, 2), 50.0)
    assert midterm_mean_mpa(_panel(real, real, 60)) == 1.0
    pred = real * 1.07  # every day has MPA 0.93
    assert midterm_mean_mpa(_panel(real, pred, 60)) == pytest.approx(0.93, abs=1e-12)


def test_midterm_mask_selects_days_30_to_59():
    real = np.full((120, 1), 10.0)
    pred = real.copy()
    pred[[0, 29, 60, 89]] = 20.0  # outside the midterm span
    p = _panel(real, pred, 60)
    assert midterm_mean_mpa(p) == 1.0
    pred[30] = 15.0
    assert midterm_mean_mpa(_panel(real, pred, 60)) == pytest.approx(1 - 0.5 / 60, abs=1e-12)
    assert p.midterm_mask.sum() == 60


def test_trend_examples():
    real = np.linspace(1, 2, 120)[:, None]
    assert trend_accuracy(_panel(real, real, 60)) == 1.0
    pred = real.copy()
    pred[60:] = pred[60:][::-1]
    assert trend_accuracy(_panel(real, pred, 60)) == 0.5


def test_flat_real_agrees_with_up_prediction():
    real = np.full((60, 1), 5.0)
    pred = np.linspace(5, 6, 60)[:, None]
    assert trend_flags(_panel(real, pred, 60))[0, 0] == 1.0


@given(st.integers(0, 2 ** 31), st.floats(0.01, 100.0))
def test_trend_range_and_scale_invariance(seed, k):
    rng = np.random.default_rng(seed)
    real = np.exp(rng.normal(size=(120, 3)).cumsum(0) * 0.05)
    pred = np.exp(rng.normal(size=(120, 3)).cumsum(0) * 0.05)
    ta = trend_accuracy(_panel(real, pred, 60))
    assert 0.0 <= ta <= 1.0
    assert trend_accuracy(_panel(k * real, k * pred, 60)) == ta


def test_log_return_examples():
    np.testing.assert_array_equal(log_returns([3.0, 3.0, 3.0]), [0.0, 0.0])
    assert log_returns([100.0, 110.0])[0] == pytest.approx(0.0953102, abs=1e-7)
    np.testing.assert_allclose(log_returns([1.0, 2.0, 4.0, 8.0]), math.log(2), atol=1e-15)
    with pytest.raises(NonPositivePrice):
        log_returns([1.0, 0.0])


@given(st.integers(0, 2 ** 31), st.sampled_from([0.5, 2.0, 4.0, 0.25]))
def test_log_returns_scale_exact(seed, k):
    x = np.exp(np.random.default_rng(seed).normal(size=20))
    np.testing.assert_allclose(log_returns(k * x), log_returns(x), atol=1e-15)


def test_cumulative_return_examples():
    assert cumulative_return([7.0, 7.0, 7.0]) == 1.0
    assert cumulative_return([100.0, 110.0, 121.0]) == pytest.approx((1 + math.log(1.1)) ** 2,
                                                                    abs=1e-12)
    # (1 + ln 1.1)^2 = 1.199704...
    assert cumulative_return([100.0, 110.0, 121.0]) == pytest.approx(1.199704, abs=1e-6)
    assert cumulative_return([42.0]) == 1.0
    assert cumulative_return([100.0, 110.0, 121.0], kind="simple") == pytest.approx(1.21)
    with pytest.raises(ValueError):
        cumulative_return([1.0, 2.0], kind="other")


@given(st.floats(0.01, 1e6), st.integers(1, 50))
def test_cumulative_return_constant_is_one(v, n):
    assert cumulative_return([v] * n) == 1.0


def test_simple_returns():
    np.testing.assert_allclose(simple_returns([100.0, 110.0, 99.0]), [0.1, -0.1])


def test_panel_validation():
    with pytest.raises(DimensionMismatch):
        PredictionPanel(np.ones((60, 2)), np.ones((60, 3)), (0,))
    with pytest.raises(NonPositivePrice):
        PredictionPanel(np.zeros((60, 1)), np.ones((60, 1)), (0,))
    with pytest.raises(DimensionMismatch):
        PredictionPanel(np.ones((60, 1)), np.ones((60, 1)), (10,))


def test_from_windows_and_subset():
    rng = np.random.default_rng(0)
    real = rng.uniform(1, 2, size=(6, 60, 4))
    pred = real * rng.uniform(0.9, 1.1, size=real.shape)
    p = PredictionPanel.from_windows(real, pred)
    assert p.window_starts == tuple(range(0, 360, 60))
    np.testing.assert_allclose(mpa_series(p)[:60],
                               1 - np.mean(np.abs(real[0] - pred[0]) / real[0], axis=1))
    sub = p.subset([1, 3])
    assert sub.real.shape == (360, 2)
