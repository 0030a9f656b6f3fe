"""Building blocks shared by the TS-LSTM and Temporal-ConvNet heads.

Layout conventions: feature matrices are ``(D, T)`` with time on the last axis,
batched as ``(B, D, T)``; convolutional activations are ``(C, D, T)`` or
``(B, C, D, T)``. All functions take and return :class:`~temporal_heads.tensor.Tensor`.

``mode`` is one of

* ``"train"``: batch statistics in batch norm (running stats updated), dropout active;
* ``"eval"``: running statistics, dropout off;
* ``"check"``: batch statistics without updating anything, dropout off. Used by
  gradient checking, where the forward pass must be a pure function.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ConfigError, ContractError, DataError, DimensionError
from .params import ParameterSet, uniform_fan_in
from .tensor import DTYPE, Tensor, as_tensor, node

MODES = ("train", "eval", "check")

# A PredictionDistribution is a (B, C) or (C,) ndarray whose rows sum to one.
PredictionDistribution = np.ndarray


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


# -- dense ------------------------------------------------------------------
def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (B, Din)."""
    x = as_tensor(x)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(
            f"fully_connected shapes do not agree: x{x.shape}, W{w.shape}, b{b.shape}")
    return T.matmul(x, w) + b


def init_fc(params: ParameterSet, rng, name: str, din: int, dout: int) -> None:
    params.add(f"{name}.w", uniform_fan_in(rng, (din, dout), din))
    params.add(f"{name}.b", uniform_fan_in(rng, (dout,), din))


def fc(params: ParameterSet, name: str, x: Tensor) -> Tensor:
    return fully_connected(x, params[f"{name}.w"], params[f"{name}.b"])


# -- batch normalisation ------------------------------------------------------
@dataclass
class BatchNormStats:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        self.running_mean = np.asarray(self.running_mean, dtype=DTYPE)
        self.running_var = np.asarray(self.running_var, dtype=DTYPE)
        if self.running_mean.shape != self.running_var.shape:
            raise DimensionError("running mean and variance shapes differ")
        if np.any(self.running_var < 0):
            raise ContractError("running variance must be non-negative")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in (0, 1), got {self.momentum}")

    @classmethod
    def fresh(cls, dim: int) -> "BatchNormStats":
        return cls(np.zeros(dim), np.ones(dim))


def batch_norm(x: Tensor, mode: str, stats: BatchNormStats | None,
               gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-feature normalisation of ``x`` (B, D) followed by ``gamma * x + beta``.

    Batch statistics use the biased variance; the running variance is updated
    with the unbiased estimate, which is why train mode needs ``B >= 2``.
    """
    check_mode(mode)
    x = as_tensor(x)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm shapes do not agree: x{x.shape}, gamma{gamma.shape}")
    eps = stats.epsilon if stats is not None else 1e-5
    if mode == "eval":
        if stats is None:
            raise ContractError("eval-mode batch_norm needs running statistics")
        scale = 1.0 / np.sqrt(stats.running_var + eps)
        return (x - stats.running_mean) * scale * gamma + beta

    n = x.shape[0]
    if n < 2:
        raise ContractError("train-mode batch_norm needs at least 2 rows")
    mu = x.mean(axis=0)
    xc = x - mu
    var = T.square(xc).mean(axis=0)
    xhat = xc / T.sqrt(var + eps)
    if mode == "train" and stats is not None:
        m = stats.momentum
        stats.running_mean = (1.0 - m) * stats.running_mean + m * mu.data
        stats.running_var = (1.0 - m) * stats.running_var + m * var.data * (n / (n - 1))
    return xhat * gamma + beta


def init_bn(params: ParameterSet, stats: dict, name: str, dim: int) -> None:
    params.add(f"{name}.gamma", np.ones(dim))
    params.add(f"{name}.beta", np.zeros(dim))
    stats[name] = BatchNormStats.fresh(dim)


def bn(params: ParameterSet, stats: dict | None, name: str, x: Tensor, mode: str) -> Tensor:
    s = None if stats is None else stats[name]
    if mode == "eval" and s is None:
        s = BatchNormStats.fresh(x.shape[1])
    return batch_norm(x, mode, s, params[f"{name}.gamma"], params[f"{name}.beta"])


# -- dropout / activations -----------------------------------------------------
def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) in train mode."""
    check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    x = as_tensor(x)
    if mode != "train" or p == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


relu = T.relu


def softmax(z) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    z = as_tensor(z)
    if np.isnan(z.data).any():
        raise ContractError("softmax received NaN logits")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return node(out, (z,), backward)


def log_softmax(z) -> Tensor:
    z = as_tensor(z)
    if np.isnan(z.data).any():
        raise ContractError("log_softmax received NaN logits")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return node(out, (z,), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise DataError(f"{labels.shape[0] if labels.ndim else 0} labels for {b} predictions")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits)
    return -(logp[np.arange(b), labels].sum() * (1.0 / b))


# -- temporal pooling ----------------------------------------------------------
def temporal_pool(x: Tensor, kind: str, window: tuple[int, int] | None = None) -> Tensor:
    """Max or mean over the time axis (last) restricted to ``[t0, t1)``."""
    x = as_tensor(x)
    n = x.shape[-1]
    t0, t1 = (0, n) if window is None else window
    if not 0 <= t0 < t1 <= n:
        raise ContractError(f"invalid pooling window [{t0}, {t1}) for {n} frames")
    part = x if (t0, t1) == (0, n) else x[..., t0:t1]
    if kind == "max":
        return T.reduce_max(part, axis=-1)
    if kind == "mean":
        return _order_free_mean(part)
    raise ConfigError(f"unknown pooling kind {kind!r}")


def _order_free_mean(x: Tensor) -> Tensor:
    """Mean over the last axis that is bit-identical under any frame permutation.

    Summing sorted values fixes the rounding order, so shuffled frames give the
    same bits. A C-contiguous copy matters too: numpy picks its reduction
    path from the memory layout. The gradient is the usual uniform ``g / n``.
    """
    n = x.shape[-1]
    out = np.ascontiguousarray(np.sort(x.data, axis=-1)).sum(axis=-1) / n

    def backward(g):
        return (np.broadcast_to(g[..., None] / n, x.shape).copy(),)

    return node(out, (x,), backward)


def temporal_max_pool(x: Tensor, width: int = 2) -> Tensor:
    """Non-overlapping max pooling along time; a trailing partial window is kept.

    Output length is ceil(T / width). Ties resolve to the earliest frame.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    out_len = -(-n // width)
    padded = np.full(x.shape[:-1] + (out_len * width,), -np.inf)
    padded[..., :n] = x.data
    blocks = padded.reshape(x.shape[:-1] + (out_len, width))
    arg = blocks.argmax(axis=-1)
    T.log_branch(arg)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros(blocks.shape)
        np.put_along_axis(grad, arg[..., None], g[..., None], axis=-1)
        return (grad.reshape(padded.shape)[..., :n],)

    return node(out, (x,), backward)


# -- temporal convolution ------------------------------------------------------
def temporal_conv1d(x: Tensor, kernels: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Convolve along time only, with zero ``same`` padding of ``k // 2`` per side.

    ``x`` is (C, D, T) or (B, C, D, T); ``kernels`` is (Cout, C, k). The same
    1 x k kernel slides over every feature row, so rows never mix. Output has
    ceil(T / stride) frames.
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise DimensionError(f"temporal_conv1d expects (C, D, T) or (B, C, D, T), got {x.shape}")
    if kernels.ndim != 3:
        raise DimensionError(f"kernels must be (Cout, C, k), got {kernels.shape}")
    cout, cin, k = kernels.shape
    if k % 2 == 0:
        raise ConfigError(f"temporal kernel size must be odd, got {k}")
    if stride not in (1, 2):
        raise ConfigError(f"stride must be 1 or 2, got {stride}")
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != cin:
        raise DimensionError(f"input has {xd.shape[1]} channels, kernels expect {cin}")
    n = xd.shape[-1]
    pad = k // 2
    out_len = -(-n // stride)
    xp = np.pad(xd, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=-1)[..., ::stride, :][..., :out_len, :]  # (B,C,D,T',k)
    out = np.tensordot(win, kernels.data, axes=([1, 4], [1, 2]))  # (B,D,T',Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out = out + bias.data[:, None, None]
    if not batched:
        out = out[0]

    def backward(g):
        gb = g if batched else g[None]
        d_kernels = np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout,C,k)
        d_win = np.tensordot(gb, kernels.data, axes=([1], [0]))  # (B,D,T',C,k)
        d_win = d_win.transpose(0, 3, 1, 2, 4)  # (B,C,D,T',k)
        d_xp = np.zeros(xp.shape)
        span = stride * (out_len - 1) + 1
        for j in range(k):
            d_xp[..., j:j + span:stride] += d_win[..., j]
        d_x = d_xp[..., pad:pad + n]
        if not batched:
            d_x = d_x[0]
        grads = [d_x, d_kernels]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return node(out, parents, backward)


def pointwise_conv(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1 x 1 convolution mixing filters: (B, C, D, T) with w (Cout, C) -> (B, Cout, D, T)."""
    x = as_tensor(x)
    if x.ndim != 4 or w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise DimensionError(f"pointwise_conv shapes do not agree: x{x.shape}, w{w.shape}")
    out = np.ascontiguousarray(np.tensordot(w.data, x.data, axes=([1], [1])).transpose(1, 0, 2, 3))
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        d_x = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2)
        d_w = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))
        grads = [d_x, d_w]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return node(out, parents, backward)


# -- LSTM --------------------------------------------------------------------------
@dataclass
class LstmState:
    hidden: Tensor
    cell: Tensor

    def __post_init__(self):
        if self.hidden.shape != self.cell.shape:
            raise DimensionError(
                f"hidden {self.hidden.shape} and cell {self.cell.shape} widths differ")

    @property
    def width(self) -> int:
        return self.hidden.shape[-1]

    @classmethod
    def zeros(cls, width: int, batch: int | None = None) -> "LstmState":
        shape = (width,) if batch is None else (batch, width)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


class LstmParams(NamedTuple):
    """Gate weights packed in the order input, forget, candidate, output."""

    w_x: Tensor  # (Din, 4H)
    w_h: Tensor  # (H, 4H)
    b: Tensor  # (4H,)

    @property
    def width(self) -> int:
        return self.w_h.shape[0]


def init_lstm(params: ParameterSet, rng, name: str, din: int, width: int,
              forget_bias: float = 1.0) -> None:
    bound = 1.0 / np.sqrt(width)
    params.add(f"{name}.w_x", rng.uniform(-bound, bound, (din, 4 * width)))
    params.add(f"{name}.w_h", rng.uniform(-bound, bound, (width, 4 * width)))
    b = rng.uniform(-bound, bound, 4 * width)
    b[width:2 * width] = forget_bias
    params.add(f"{name}.b", b)


def lstm_params(params: ParameterSet, name: str) -> LstmParams:
    return LstmParams(params[f"{name}.w_x"], params[f"{name}.w_h"], params[f"{name}.b"])


def lstm_step(x_t: Tensor, state: LstmState, p: LstmParams) -> LstmState:
    """One LSTM cell update; ``x_t`` is (Din,) or (B, Din)."""
    x_t = as_tensor(x_t)
    single = x_t.ndim == 1
    h = p.width
    if state.width != h or x_t.shape[-1] != p.w_x.shape[0] or p.w_x.shape[1] != 4 * h:
        raise DimensionError(
            f"lstm_step widths inconsistent: x{x_t.shape}, state {state.width}, "
            f"w_x{p.w_x.shape}, w_h{p.w_h.shape}")
    x2 = x_t.reshape(1, -1) if single else x_t
    h_prev = state.hidden.reshape(1, -1) if single else state.hidden
    c_prev = state.cell.reshape(1, -1) if single else state.cell
    z = T.matmul(x2, p.w_x) + T.matmul(h_prev, p.w_h) + p.b
    i = T.sigmoid(z[:, 0:h])
    f = T.sigmoid(z[:, h:2 * h])
    g = T.tanh(z[:, 2 * h:3 * h])
    o = T.sigmoid(z[:, 3 * h:4 * h])
    c = f * c_prev + i * g
    hid = o * T.tanh(c)
    if single:
        return LstmState(hid.reshape(h), c.reshape(h))
    return LstmState(hid, c)


def lstm_stack(sequence: Sequence[Tensor], layers: Sequence[LstmParams]) -> Tensor:
    """Run stacked LSTM layers from zero state; return the top layer's last hidden vector."""
    if len(sequence) == 0:
        raise ContractError("lstm_stack needs a non-empty sequence")
    if len(layers) == 0:
        raise ContractError("lstm_stack needs at least one layer")
    inputs = [as_tensor(s) for s in sequence]
    batch = None if inputs[0].ndim == 1 else inputs[0].shape[0]
    for p in layers:
        state = LstmState.zeros(p.width, batch)
        outputs = []
        for x_t in inputs:
            state = lstm_step(x_t, state, p)
            outputs.append(state.hidden)
        inputs = outputs
    return inputs[-1]
