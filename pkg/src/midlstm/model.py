"""Per-stock Mid-LSTM estimator: LSTM forecast, HMM regimes, linear fusion."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_float_array, check_is_fitted, check_same_length
from .baselines import LinearAutoregressor, fit_autoregressor, predict_full_sequence_baseline
from .data import (
    NormalizationParams,
    apply_normalization,
    denormalize,
    make_windows,
    minmax_normalize,
    split_point,
)
from .errors import RankDeficient, SeriesTooShort
from .fusion import (
    FusionWeights,
    build_dataset,
    correlation,
    fit_fusion,
    refine_prediction,
    volume_feature,
)
from .hmm import GaussianHmm, baum_welch, state_labels
from .lstm import LstmNetwork, TrainConfig, predict_full_sequence, train

CHECKPOINT_VERSION = 1
CHANNELS = ("price", "market", "volume")


@dataclass
class WindowForecast:
    """Forecasts for a batch of windows, each array ``[window, day]``.

    Prices are in currency units; ``states`` are decoded HMM states of the
    predicted (price, volume) path.
    """

    mid_lstm: np.ndarray
    lstm: np.ndarray
    linear: np.ndarray
    ridge: np.ndarray
    market: np.ndarray
    volume: np.ndarray
    states: np.ndarray
    rho: np.ndarray

    def methods(self) -> dict:
        return {"mid-lstm": self.mid_lstm, "lstm": self.lstm,
                "linear": self.linear, "ridge": self.ridge}


class MidLSTM(BaseEstimator):
    """Fit on one stock's close/volume series and the market index.

    The first ``split_fraction`` of the days is used for everything that is
    fitted: scaling bounds, the LSTM, the HMM, the fusion weights and the
    linear baselines. Fusion rows come from recursive forecasts of
    consecutive ``window_length`` blocks inside that training span.
    """

    def __init__(self, window_length=60, split_fraction=0.85, hidden_dims=(64, 64, 32),
                 dropout_rate=0.2, dropout_after=(0, 2), learning_rate=1e-3, epochs=50,
                 batch_size=32, clip_norm=5.0, n_states=4, hmm_iterations=10,
                 variance_floor=1e-6, volume_transform="log1p", state_encoding="index",
                 fusion_stride=None, ridge_lambda=1.0, seed=0):
        self.window_length = window_length
        self.split_fraction = split_fraction
        self.hidden_dims = hidden_dims
        self.dropout_rate = dropout_rate
        self.dropout_after = dropout_after
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.n_states = n_states
        self.hmm_iterations = hmm_iterations
        self.variance_floor = variance_floor
        self.volume_transform = volume_transform
        self.state_encoding = state_encoding
        self.fusion_stride = fusion_stride
        self.ridge_lambda = ridge_lambda
        self.seed = seed

    def _features(self, price, market, volume) -> np.ndarray:
        cols = [apply_normalization(x, self.scalers_[c])
                for x, c in zip((price, market, volume), CHANNELS)]
        return np.column_stack(cols)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(hidden_dims=tuple(self.hidden_dims), dropout_rate=self.dropout_rate,
                           dropout_after=tuple(self.dropout_after),
                           learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, clip_norm=self.clip_norm, seed=self.seed)

    def fit(self, price, market, volume):
        price = as_float_array(price, ndim=1, name="price")
        market = as_float_array(market, ndim=1, name="market")
        volume = as_float_array(volume, ndim=1, name="volume")
        n = check_same_length(price, market, volume, names=["price", "market", "volume"])
        L = self.window_length
        if n < 2 * L:
            raise SeriesTooShort(f"series of {n} days is shorter than 2 x {L}")
        n_train = split_point(n, self.split_fraction)
        self.scalers_ = {c: minmax_normalize(x[:n_train])[1]
                         for x, c in zip((price, market, volume), CHANNELS)}
        F = self._features(price, market, volume)
        train_set, _ = make_windows(F, L, self.split_fraction)

        self.network_, self.loss_history_ = train(train_set, self._train_config())

        obs = np.column_stack([F[:n_train, 0], volume_feature(volume[:n_train],
                                                              self.volume_transform)])
        chunks = [obs[s:s + L] for s in range(0, n_train - L + 1, L)] or [obs]
        self.hmm_ = baum_welch(chunks, self.n_states, self.hmm_iterations, self.variance_floor)

        stride = self.fusion_stride or L
        starts = np.arange(L - 1, n_train - L + 1, stride)
        if len(starts) == 0:
            raise SeriesTooShort("training span holds no full block for the fusion fit")
        contexts = np.stack([F[s - (L - 1):s] for s in starts])
        real = np.stack([F[s:s + L, 0] for s in starts])
        paths = self._lstm_paths(contexts)
        self.fusion_data_ = build_dataset(
            paths[..., 0], paths[..., 1], self._raw_volume(paths[..., 2]), self.hmm_, real,
            self.volume_transform)
        self.fusion_ = fit_fusion(self.fusion_data_, self.state_encoding, self.n_states)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficient)
            self.linear_ = fit_autoregressor(train_set, 0.0)
        self.ridge_ = fit_autoregressor(train_set, self.ridge_lambda)
        self.train_correlation_ = correlation(price[:n_train], market[:n_train])
        self.n_train_ = n_train
        return self

    def _raw_volume(self, v_norm):
        return denormalize(v_norm, self.scalers_["volume"])

    def _lstm_paths(self, contexts) -> np.ndarray:
        """``(W, L-1, 3)`` contexts to ``(W, L, 3)`` normalized forecasts."""
        paths = predict_full_sequence(np.transpose(contexts, (1, 0, 2)), self.network_,
                                      self.window_length)
        return np.transpose(paths, (1, 0, 2))

    def forecast(self, contexts) -> WindowForecast:
        """Forecast full windows from ``(W, L-1, 3)`` normalized real contexts."""
        check_is_fitted(self, "fusion_")
        contexts = np.asarray(contexts, dtype=np.float64)
        paths = self._lstm_paths(contexts)
        data = build_dataset(paths[..., 0], paths[..., 1], self._raw_volume(paths[..., 2]),
                             self.hmm_, None, self.volume_transform)
        shape = paths.shape[:2]
        refined = refine_prediction(data.price_pred, data.market_pred, data.rho, data.state,
                                    self.fusion_).reshape(shape)
        p = self.scalers_["price"]
        L = self.window_length
        base = contexts[..., 0]
        return WindowForecast(
            mid_lstm=denormalize(refined, p),
            lstm=denormalize(paths[..., 0], p),
            linear=denormalize(predict_full_sequence_baseline(base, self.linear_, L), p),
            ridge=denormalize(predict_full_sequence_baseline(base, self.ridge_, L), p),
            market=denormalize(paths[..., 1], self.scalers_["market"]),
            volume=self._raw_volume(paths[..., 2]),
            states=data.state.reshape(shape).astype(int),
            rho=data.rho.reshape(shape)[:, 0],
        )

    def test_windows(self, price, market, volume):
        """Normalized contexts, real price segments and segment start indices."""
        check_is_fitted(self, "scalers_")
        F = self._features(np.asarray(price, float), np.asarray(market, float),
                           np.asarray(volume, float))
        _, test = make_windows(F, self.window_length, self.split_fraction)
        real = denormalize(test.segments[..., 0], self.scalers_["price"])
        return test.contexts, real, test.starts

    def regime_labels(self):
        check_is_fitted(self, "hmm_")
        if self.hmm_.n_states != 4:
            return None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return state_labels(self.hmm_)

    def to_dict(self) -> dict:
        check_is_fitted(self, "fusion_")
        return {
            "version": CHECKPOINT_VERSION,
            "params": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in self.get_params().items()},
            "scalers": {c: [p.min_value, p.max_value] for c, p in self.scalers_.items()},
            "lstm": self.network_.to_dict(),
            "loss_history": list(self.loss_history_),
            "hmm": self.hmm_.to_dict(),
            "hmm_labels": self.regime_labels(),
            "fusion": self.fusion_.to_dict(),
            "linear": self.linear_.to_dict(),
            "ridge": self.ridge_.to_dict(),
            "train_correlation": self.train_correlation_,
            "n_train": self.n_train_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MidLSTM":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        params = dict(d["params"])
        for key in ("hidden_dims", "dropout_after"):
            params[key] = tuple(params[key])
        model = cls(**params)
        model.scalers_ = {c: NormalizationParams(*v) for c, v in d["scalers"].items()}
        model.network_ = LstmNetwork.from_dict(d["lstm"])
        model.loss_history_ = list(d["loss_history"])
        model.hmm_ = GaussianHmm.from_dict(d["hmm"])
        model.fusion_ = FusionWeights.from_dict(d["fusion"])
        model.linear_ = LinearAutoregressor.from_dict(d["linear"])
        model.ridge_ = LinearAutoregressor.from_dict(d["ridge"])
        model.train_correlation_ = d["train_correlation"]
        model.n_train_ = d["n_train"]
        return model
