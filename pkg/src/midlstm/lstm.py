"""Stacked LSTM trained from scratch with BPTT and Adam.

Everything runs in float64 numpy. Arrays are time-major: a batch of
sequences has shape ``(T, B, features)``; a single sequence ``(T, features)``
is accepted everywhere and treated as ``B = 1``.

Gate pre-activations of a layer are packed into one matrix ``W`` of shape
``(4H, H + I)`` acting on ``[h_prev, x]``, rows ordered input, forget,
output, candidate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import check_is_fitted
from .errors import DimensionMismatch, SeriesTooShort

logger = logging.getLogger(__name__)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmLayerParams:
    W: np.ndarray  # (4H, H + I)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        H4, cols = self.W.shape
        if H4 % 4 or self.b.shape != (H4,) or cols <= H4 // 4:
            raise DimensionMismatch(
                f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}"
            )

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[1] - self.hidden_dim

    def _rows(self, k):
        H = self.hidden_dim
        return slice(k * H, (k + 1) * H)

    W_i = property(lambda self: self.W[self._rows(0)])
    W_f = property(lambda self: self.W[self._rows(1)])
    W_o = property(lambda self: self.W[self._rows(2)])
    W_c = property(lambda self: self.W[self._rows(3)])
    b_i = property(lambda self: self.b[self._rows(0)])
    b_f = property(lambda self: self.b[self._rows(1)])
    b_o = property(lambda self: self.b[self._rows(2)])
    b_c = property(lambda self: self.b[self._rows(3)])

    @classmethod
    def from_gates(cls, W_i, W_f, W_o, W_c, b_i, b_f, b_o, b_c):
        return cls(np.vstack([W_i, W_f, W_o, W_c]).astype(np.float64),
                   np.concatenate([b_i, b_f, b_o, b_c]).astype(np.float64))


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray
    i: np.ndarray | None = None
    f: np.ndarray | None = None
    o: np.ndarray | None = None
    c_hat: np.ndarray | None = None

    @classmethod
    def zeros(cls, hidden_dim: int, batch: int | None = None):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class LstmNetwork:
    layers: list
    dense_W: np.ndarray  # (O, H_last)
    dense_b: np.ndarray  # (O,)
    dropout_rate: float = 0.2
    dropout_after: tuple = (0, 2)

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.input_dim != lower.hidden_dim:
                raise DimensionMismatch("layer dimensions do not chain")
        if self.dense_W.shape != (len(self.dense_b), self.layers[-1].hidden_dim):
            raise DimensionMismatch("dense layer does not match last LSTM layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return len(self.dense_b)

    @property
    def hidden_dims(self) -> tuple:
        return tuple(layer.hidden_dim for layer in self.layers)

    def parameters(self) -> list:
        """Flat list of parameter arrays; gradients use the same order."""
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out + [self.dense_W, self.dense_b]

    def with_parameters(self, params) -> "LstmNetwork":
        params = list(params)
        layers = [LstmLayerParams(params[2 * k], params[2 * k + 1])
                  for k in range(len(self.layers))]
        return replace(self, layers=layers, dense_W=params[-2], dense_b=params[-1])

    def copy(self) -> "LstmNetwork":
        return self.with_parameters([p.copy() for p in self.parameters()])

    def to_dict(self) -> dict:
        return {
            "hidden_dims": list(self.hidden_dims),
            "input_dim": self.input_dim,
            "dropout_rate": self.dropout_rate,
            "dropout_after": list(self.dropout_after),
            "layers": [{"W": layer.W.tolist(), "b": layer.b.tolist()} for layer in self.layers],
            "dense_W": self.dense_W.tolist(),
            "dense_b": self.dense_b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LstmNetwork":
        layers = [LstmLayerParams(np.array(l["W"], dtype=np.float64),
                                  np.array(l["b"], dtype=np.float64)) for l in d["layers"]]
        return cls(layers, np.array(d["dense_W"], dtype=np.float64),
                   np.array(d["dense_b"], dtype=np.float64),
                   dropout_rate=d["dropout_rate"], dropout_after=tuple(d["dropout_after"]))


def init_network(input_dim: int, hidden_dims=(64, 64, 32), output_dim: int | None = None,
                 dropout_rate: float = 0.2, dropout_after=(0, 2), seed: int = 0,
                 forget_bias: float = 1.0) -> LstmNetwork:
    """Uniform ±1/sqrt(fan_in) weights; zero biases except the forget gate."""
    rng = np.random.default_rng(seed)
    output_dim = input_dim if output_dim is None else output_dim
    layers, prev = [], input_dim
    for H in hidden_dims:
        bound = 1.0 / np.sqrt(H + prev)
        W = rng.uniform(-bound, bound, size=(4 * H, H + prev))
        b = np.zeros(4 * H)
        b[H:2 * H] = forget_bias
        layers.append(LstmLayerParams(W, b))
        prev = H
    bound = 1.0 / np.sqrt(prev)
    dense_W = rng.uniform(-bound, bound, size=(output_dim, prev))
    return LstmNetwork(layers, dense_W, np.zeros(output_dim),
                       dropout_rate=dropout_rate, dropout_after=tuple(dropout_after))


def cell_forward(x, prev: CellState, params: LstmLayerParams) -> CellState:
    """One LSTM step. ``x`` is ``(I,)`` or ``(B, I)``."""
    x = np.asarray(x, dtype=np.float64)
    H = params.hidden_dim
    if x.shape[-1] != params.input_dim or prev.h.shape[-1] != H or prev.c.shape[-1] != H:
        raise DimensionMismatch(
            f"input {x.shape} / state {prev.h.shape} incompatible with "
            f"layer ({params.input_dim} -> {H})"
        )
    z = np.concatenate([prev.h, x], axis=-1) @ params.W.T + params.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    c_hat = np.tanh(z[..., 3 * H:])
    c = f * prev.c + i * c_hat
    h = o * np.tanh(c)
    return CellState(h=h, c=c, i=i, f=f, o=o, c_hat=c_hat)


@dataclass
class Tape:
    net: LstmNetwork
    squeeze: bool
    layer_inputs: list = field(default_factory=list)  # (T, B, I_l)
    hs: list = field(default_factory=list)  # (T+1, B, H), hs[0] is the initial state
    cs: list = field(default_factory=list)
    gates: list = field(default_factory=list)  # (T, B, 4H) post-activation
    masks: list = field(default_factory=list)  # dropout multiplier or None
    top: np.ndarray | None = None  # input to the dense layer
    outputs: np.ndarray | None = None


def _as_batch(sequence):
    x = np.asarray(sequence, dtype=np.float64)
    if x.ndim == 2:
        return x[:, None, :], True
    if x.ndim != 3:
        raise DimensionMismatch(f"sequence must be (T, I) or (T, B, I), got {x.shape}")
    return x, False


def forward(sequence, net: LstmNetwork, training: bool = False, rng=None):
    """Run the network over ``sequence``; returns per-step outputs and a tape."""
    X, squeeze = _as_batch(sequence)
    T, B, I = X.shape
    if T == 0:
        raise ValueError("sequence is empty")
    if I != net.input_dim:
        raise DimensionMismatch(f"expected {net.input_dim} input features, got {I}")
    if training and net.dropout_rate > 0 and rng is None:
        rng = np.random.default_rng()
    tape = Tape(net=net, squeeze=squeeze)
    for k, layer in enumerate(net.layers):
        H = layer.hidden_dim
        Wh, Wx = layer.W[:, :H], layer.W[:, H:]
        Zx = X @ Wx.T + layer.b
        hs = np.zeros((T + 1, B, H))
        cs = np.zeros((T + 1, B, H))
        gates = np.empty((T, B, 4 * H))
        for t in range(T):
            z = Zx[t] + hs[t] @ Wh.T
            g = gates[t]
            g[:, :3 * H] = sigmoid(z[:, :3 * H])
            g[:, 3 * H:] = np.tanh(z[:, 3 * H:])
            cs[t + 1] = g[:, H:2 * H] * cs[t] + g[:, :H] * g[:, 3 * H:]
            hs[t + 1] = g[:, 2 * H:3 * H] * np.tanh(cs[t + 1])
        tape.layer_inputs.append(X)
        tape.hs.append(hs)
        tape.cs.append(cs)
        tape.gates.append(gates)
        out = hs[1:]
        mask = None
        if training and k in net.dropout_after and net.dropout_rate > 0:
            keep = 1.0 - net.dropout_rate
            mask = (rng.random(out.shape) < keep) / keep
            out = out * mask
        tape.masks.append(mask)
        X = out
    tape.top = X
    Y = X @ net.dense_W.T + net.dense_b
    tape.outputs = Y
    return (Y[:, 0, :] if squeeze else Y), tape


def _targets_like(tape: Tape, target):
    Y = np.asarray(target, dtype=np.float64)
    if tape.squeeze:
        Y = Y.reshape(-1, 1, tape.outputs.shape[-1]) if Y.ndim <= 2 else Y
    elif Y.ndim == 2:
        Y = Y[None]
    k = Y.shape[0]
    if Y.shape[1:] != tape.outputs.shape[1:] or not 1 <= k <= tape.outputs.shape[0]:
        raise DimensionMismatch(f"targets {Y.shape} do not align with outputs {tape.outputs.shape}")
    return Y


def mse_loss(tape: Tape, target) -> float:
    """Mean over (step, sequence) of the squared error summed over outputs.

    ``target`` covers the last ``k`` steps of the taped forward pass.
    """
    Y = _targets_like(tape, target)
    err = tape.outputs[-len(Y):] - Y
    return float(np.sum(err * err) / (err.shape[0] * err.shape[1]))


def backward(tape: Tape, target) -> list:
    """Exact gradient of :func:`mse_loss` for every parameter, via BPTT.

    Returned in :meth:`LstmNetwork.parameters` order.
    """
    net = tape.net
    Y = _targets_like(tape, target)
    T, B, _ = tape.outputs.shape
    k = len(Y)
    dOut = np.zeros_like(tape.outputs)
    dOut[T - k:] = 2.0 * (tape.outputs[T - k:] - Y) / (k * B)

    d_dense_W = np.tensordot(dOut, tape.top, axes=([0, 1], [0, 1]))
    d_dense_b = dOut.sum(axis=(0, 1))
    dX = dOut @ net.dense_W

    grads = []
    for idx in reversed(range(len(net.layers))):
        layer = net.layers[idx]
        H = layer.hidden_dim
        if tape.masks[idx] is not None:
            dX = dX * tape.masks[idx]
        hs, cs, gates = tape.hs[idx], tape.cs[idx], tape.gates[idx]
        Wh = layer.W[:, :H]
        dZ = np.empty_like(gates)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            g = gates[t]
            i, f, o, c_hat = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            dh = dX[t] + dh_next
            tc = np.tanh(cs[t + 1])
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dZ[t]
            dz[:, :H] = dc * c_hat * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - c_hat * c_hat)
            dc_next = dc * f
            dh_next = dz @ Wh
        inputs = np.concatenate([hs[:-1], tape.layer_inputs[idx]], axis=-1)
        dW = np.tensordot(dZ, inputs, axes=([0, 1], [0, 1]))
        db = dZ.sum(axis=(0, 1))
        grads = [dW, db] + grads
        dX = dZ @ layer.W[:, H:]
    return grads + [d_dense_W, d_dense_b]


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper):
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update. Inputs are left untouched."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise DimensionMismatch("parameter and gradient shapes disagree")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * m_ + (1 - b1) * g for m_, g in zip(state.first_moment, grads)]
    v = [b2 * v_ + (1 - b2) * g * g for v_, g in zip(state.second_moment, grads)]
    bc1, bc2 = 1 - b1 ** t, 1 - b2 ** t
    new_params = [p - state.learning_rate * (m_ / bc1) / (np.sqrt(v_ / bc2) + state.epsilon)
                  for p, m_, v_ in zip(params, m, v)]
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)


def clip_by_global_norm(grads, max_norm: float):
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if max_norm is None or norm <= max_norm or norm == 0:
        return grads, norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


@dataclass
class TrainConfig:
    hidden_dims: tuple = (64, 64, 32)
    dropout_rate: float = 0.2
    dropout_after: tuple = (0, 2)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int | None = 32
    clip_norm: float | None = 5.0
    seed: int = 0


def train(windows, config: TrainConfig | None = None, net: LstmNetwork | None = None):
    """Fit one-step-ahead: each (window_length-1)-step input predicts the next day.

    ``windows`` is a training :class:`~midlstm.data.RollingWindowSet` or an
    ``(inputs, targets)`` pair with shapes ``(n, T, F)`` and ``(n, F)``.
    Returns ``(network, epoch_losses)``; ``epoch_losses[0]`` is the loss of
    the initial network in inference mode.
    """
    config = config or TrainConfig()
    inputs, targets = (windows.inputs, windows.targets) if hasattr(windows, "inputs") else windows
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(inputs) == 0:
        raise SeriesTooShort("no training windows")
    if targets.ndim == 1:
        targets = targets[:, None]
    if inputs.ndim == 2:
        inputs = inputs[:, :, None]
    n, _, F = inputs.shape
    X = inputs.transpose(1, 0, 2)  # time-major
    if net is None:
        net = init_network(F, config.hidden_dims, targets.shape[1], config.dropout_rate,
                           config.dropout_after, seed=config.seed)
    rng = np.random.default_rng([config.seed, 1])
    params = [p.copy() for p in net.parameters()]
    state = AdamState.for_params(params, learning_rate=config.learning_rate,
                                 beta1=config.beta1, beta2=config.beta2,
                                 epsilon=config.epsilon)
    batch = n if not config.batch_size else min(config.batch_size, n)

    def full_loss(p):
        _, tape = forward(X, net.with_parameters(p), training=False)
        return mse_loss(tape, targets[None])

    losses = [full_loss(params)]
    for epoch in range(config.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        total = 0.0
        for start in range(0, n, batch):
            sel = order[start:start + batch]
            _, tape = forward(X[:, sel], net.with_parameters(params), training=True, rng=rng)
            y = targets[sel][None]
            total += mse_loss(tape, y) * len(sel)
            grads, _ = clip_by_global_norm(backward(tape, y), config.clip_norm)
            params, state = adam_step(params, grads, state)
        losses.append(total / n)
        logger.debug("epoch %d loss %.6g", epoch + 1, losses[-1])
    return net.with_parameters(params), losses


def predict_next(window, net: LstmNetwork) -> np.ndarray:
    """Inference-mode output at the last step of each window."""
    out, _ = forward(window, net, training=False)
    return out[-1]


def predict_full_sequence(window, net: LstmNetwork, horizon: int = 60) -> np.ndarray:
    """Recursive multi-step forecast.

    Each step re-reads the last ``len(window)`` values, the oldest real day
    having been replaced by the previous prediction. ``window`` is ``(T, F)``
    or time-major ``(T, B, F)``; returns ``(horizon, F)`` or ``(horizon, B, F)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    W, squeeze = _as_batch(window)
    W = W.copy()
    preds = np.empty((horizon,) + W.shape[1:])
    for k in range(horizon):
        nxt = predict_next(W, net)
        preds[k] = nxt
        W = np.concatenate([W[1:], nxt[None]], axis=0)
    return preds[:, 0, :] if squeeze else preds


class LstmRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(X, y)`` with ``X`` of shape ``(n, T, F)``.

    ``predict`` returns the next-step triple for each window, and
    :meth:`predict_full_sequence` runs the recursive forecast.
    """

    def __init__(self, hidden_dims=(64, 64, 32), dropout_rate=0.2, dropout_after=(0, 2),
                 learning_rate=1e-3, epochs=50, batch_size=32, clip_norm=5.0, seed=0):
        self.hidden_dims = hidden_dims
        self.dropout_rate = dropout_rate
        self.dropout_after = dropout_after
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(hidden_dims=tuple(self.hidden_dims), dropout_rate=self.dropout_rate,
                           dropout_after=tuple(self.dropout_after),
                           learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, clip_norm=self.clip_norm, seed=self.seed)

    def fit(self, X, y):
        self.network_, self.loss_history_ = train((X, y), self._config())
        self.n_features_in_ = self.network_.input_dim
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        return predict_next(X.transpose(1, 0, 2), self.network_)

    def predict_full_sequence(self, window, horizon=60):
        """``window`` is ``(T, F)`` or batch-major ``(B, T, F)``."""
        check_is_fitted(self, "network_")
        window = np.asarray(window, dtype=np.float64)
        if window.ndim == 3:
            return predict_full_sequence(window.transpose(1, 0, 2), self.network_,
                                         horizon).transpose(1, 0, 2)
        return predict_full_sequence(window, self.network_, horizon)
