"""Temporal convolution, batch norm, pooling and classifier operators.

Feature maps are laid out as ``(C, s)`` for a single example or ``(m, C, s)``
for a mini-batch; every operator here accepts both unless noted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Parameter, ShapeError, Tensor, as_tensor, get_dtype, record

BN_EPSILON = 1e-5
BN_UPDATE_RATE = 0.1


class PoolKind(str, enum.Enum):
    STRIDED_CONV = "strided_conv"
    HALF_KMAX = "half_kmax"
    MAXPOOL = "maxpool_3_2"

    @classmethod
    def parse(cls, value: "str | PoolKind") -> "PoolKind":
        if isinstance(value, PoolKind):
            return value
        aliases = {"conv": cls.STRIDED_CONV, "convolution": cls.STRIDED_CONV,
                   "kmax": cls.HALF_KMAX, "maxpool": cls.MAXPOOL, "max": cls.MAXPOOL}
        key = value.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown pool kind {value!r}") from None


@dataclass
class ConvWeights:
    kernels: Parameter  # (C_out, C_in, w)
    bias: Optional[Parameter] = None

    def __post_init__(self):
        if self.kernels.ndim != 3:
            raise ShapeError(f"conv kernels must be (C_out, C_in, w), got {self.kernels.shape}")
        if self.bias is not None and self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"conv bias shape {self.bias.shape} does not match {self.kernels.shape[0]} outputs")

    @property
    def width(self) -> int:
        return self.kernels.shape[2]

    def parameters(self) -> list[Parameter]:
        return [self.kernels] + ([self.bias] if self.bias is not None else [])


@dataclass
class BatchNormState:
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    update_rate: float = BN_UPDATE_RATE

    @classmethod
    def create(cls, channels: int, name: str) -> "BatchNormState":
        dt = get_dtype()
        return cls(
            gamma=Parameter(np.ones(channels), f"{name}.gamma"),
            beta=Parameter(np.zeros(channels), f"{name}.beta"),
            running_mean=np.zeros(channels, dtype=dt),
            running_var=np.ones(channels, dtype=dt),
        )

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


def _batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise ShapeError(f"expected a (C, s) or (m, C, s) feature map, got {x.shape}")


def embedding_lookup(ids, table: Tensor) -> Tensor:
    """Gather table rows; ``ids`` of shape (s,) or (m, s) give (f0, s) or (m, f0, s)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("token ids must be integers")
    V = table.shape[0]
    bad = np.argwhere((ids < 0) | (ids >= V))
    if bad.size:
        pos = tuple(int(i) for i in bad[0])
        raise IndexError(f"token id {int(ids[pos])} at position {pos} outside [0, {V})")
    out = np.swapaxes(table.data[ids], -1, -2)

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), np.swapaxes(g, -1, -2).reshape(-1, table.shape[1]))
        return (gt,)

    return record("embedding", (table,), out, bw)


def conv_output_length(s: int, w: int, stride: int, pad: int) -> int:
    return (s + 2 * pad - w) // stride + 1


def _conv_backward(g, cols, W, x_shape, stride, pad, has_bias):
    """Gradients of temporal_conv w.r.t. (x, kernels, bias)."""
    m, C_in, s = x_shape
    C_out, _, w = W.shape
    s_out = g.shape[2]
    g2 = g.transpose(0, 2, 1).reshape(m * s_out, C_out)
    dW = (g2.T @ cols).reshape(W.shape)
    dcols = (g2 @ W.reshape(C_out, -1)).reshape(m, s_out, C_in, w)
    dxp = np.zeros((m, C_in, s + 2 * pad), dtype=g.dtype)
    span = stride * (s_out - 1) + 1
    for k in range(w):
        dxp[:, :, k:k + span:stride] += dcols[:, :, :, k].transpose(0, 2, 1)
    dx = dxp[:, :, pad:pad + s]
    db = g.sum(axis=(0, 2)) if has_bias else None
    return dx, dW, db


def temporal_conv(x, weights: ConvWeights, stride: int = 1, pad: int = 1) -> Tensor:
    """1-D convolution along the token axis with zero padding on both ends."""
    x = as_tensor(x)
    X, single = _batched(x)
    W = weights.kernels.data
    C_out, C_in, w = W.shape
    m, c, s = X.shape
    if c != C_in:
        raise ShapeError(f"temporal_conv: input has {c} channels, kernels expect {C_in}")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    if s + 2 * pad < w:
        raise ShapeError(f"temporal_conv: length {s} with pad {pad} is shorter than kernel width {w}")
    s_out = conv_output_length(s, w, stride, pad)
    xp = np.pad(X, ((0, 0), (0, 0), (pad, pad))) if pad else X
    win = sliding_window_view(xp, w, axis=2)[:, :, : stride * (s_out - 1) + 1 : stride]
    cols = win.transpose(0, 2, 1, 3).reshape(m * s_out, C_in * w)
    out = (cols @ W.reshape(C_out, -1).T).reshape(m, s_out, C_out).transpose(0, 2, 1)
    if weights.bias is not None:
        out = out + weights.bias.data[:, None]
    out = np.ascontiguousarray(out)
    has_bias = weights.bias is not None

    def bw(g):
        if single:
            g = g[None]
        dx, dW, db = _conv_backward(g, cols, W, (m, C_in, s), stride, pad, has_bias)
        if single:
            dx = dx[0]
        return (dx, dW, db) if has_bias else (dx, dW)

    inputs = (x, weights.kernels, weights.bias) if has_bias else (x, weights.kernels)
    return record("temporal_conv", inputs, out[0] if single else out, bw)


def temporal_batch_norm(x, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel normalisation over the batch and temporal axes jointly.

    In train mode the statistics come from the ``m * s`` positions of each
    channel and the running estimates move toward them (the running variance
    uses the unbiased estimate). Eval mode uses the running estimates only.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"temporal_batch_norm expects (m, C, s), got {x.shape}")
    X = x.data
    m, C, s = X.shape
    if state.gamma.shape != (C,):
        raise ShapeError(f"batch norm has {state.gamma.shape[0]} channels, input has {C}")
    gamma = state.gamma.data[:, None]
    beta = state.beta.data[:, None]

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + state.epsilon)
        xhat = (X - state.running_mean[:, None]) * inv_std[:, None]
        out = (gamma * xhat + beta).astype(X.dtype)

        def bw_eval(g):
            return g * (gamma * inv_std[:, None]), (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

        return record("temporal_batch_norm", (x, state.gamma, state.beta), out, bw_eval)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    n = m * s
    if n < 2:
        raise ShapeError(f"train-mode batch norm needs m*s >= 2, got {n}")
    mean = X.mean(axis=(0, 2))
    centered = X - mean[:, None]
    var = (centered ** 2).mean(axis=(0, 2))
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = centered * inv_std[:, None]
    out = gamma * xhat + beta

    r = state.update_rate
    state.running_mean[...] = (1 - r) * state.running_mean + r * mean
    state.running_var[...] = (1 - r) * state.running_var + r * var * (n / (n - 1))

    def bw_train(g):
        dxhat = g * gamma
        s1 = dxhat.sum(axis=(0, 2))[:, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2))[:, None]
        dx = (inv_std[:, None] / n) * (n * dxhat - s1 - xhat * s2)
        return dx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return record("temporal_batch_norm", (x, state.gamma, state.beta), out, bw_train)


def pool_output_length(s: int, kind: PoolKind) -> int:
    """Temporal length after one down-sampling step of the given kind."""
    if kind is PoolKind.MAXPOOL:
        return (s - 1) // 2 + 1
    if kind is PoolKind.HALF_KMAX:
        return -(-s // 2)
    return (s + 1) // 2


def temporal_max_pool(x, kernel: int = 3, stride: int = 2, pad: int = 1) -> Tensor:
    """Max over sliding windows; padding is -inf so it never wins.

    Gradient flows to the first maximal position of each window.
    """
    x = as_tensor(x)
    X, single = _batched(x)
    m, C, s = X.shape
    if s + 2 * pad < kernel:
        raise ShapeError(f"temporal_max_pool: length {s} too short for kernel {kernel}")
    s_out = (s + 2 * pad - kernel) // stride + 1
    xp = np.pad(X, ((0, 0), (0, 0), (pad, pad)), constant_values=-np.inf) if pad else X
    span = stride * (s_out - 1) + 1
    win = sliding_window_view(xp, kernel, axis=2)[:, :, :span:stride]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        if single:
            g = g[None]
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for k in range(kernel):
            dxp[:, :, k:k + span:stride] += np.where(arg == k, g, 0)
        dx = dxp[:, :, pad:pad + s]
        return (dx[0] if single else dx,)

    out = np.ascontiguousarray(out)
    return record("temporal_max_pool", (x,), out[0] if single else out, bw)


def k_max_pool(x, k: int) -> Tensor:
    """The ``k`` largest values of each row, kept in their original order.

    Among equal values the earlier position is preferred.
    """
    x = as_tensor(x)
    X, single = _batched(x)
    s = X.shape[2]
    if k < 1 or k > s:
        raise ShapeError(f"k_max_pool: k={k} must lie in [1, {s}]")
    order = np.argsort(-X, axis=-1, kind="stable")[..., :k]
    idx = np.sort(order, axis=-1)
    out = np.take_along_axis(X, idx, axis=-1)

    def bw(g):
        if single:
            g = g[None]
        dx = np.zeros(X.shape, dtype=g.dtype)
        np.put_along_axis(dx, idx, g, axis=-1)
        return (dx[0] if single else dx,)

    return record("k_max_pool", (x,), out[0] if single else out, bw)


def half_k_max_pool(x) -> Tensor:
    x = as_tensor(x)
    s = x.shape[-1]
    if s < 2:
        raise ShapeError("half_k_max_pool needs s >= 2")
    return k_max_pool(x, -(-s // 2))


def fully_connected(x, W: Tensor, b: Tensor) -> Tensor:
    """y = W x + b for x of shape (I,) or (m, I); W is (O, I)."""
    x = as_tensor(x)
    single = x.ndim == 1
    X = x.data[None] if single else x.data
    if W.ndim != 2 or X.ndim != 2 or W.shape[1] != X.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"fully_connected: x {x.shape}, W {W.shape}, b {b.shape} do not agree")
    Wd = W.data
    out = X @ Wd.T + b.data

    def bw(g):
        if single:
            g = g[None]
        dx = g @ Wd
        return (dx[0] if single else dx), g.T @ X, g.sum(axis=0)

    return record("fully_connected", (x, W, b), out[0] if single else out, bw)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (m, n), got {logits.shape}")
    m, n = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise ShapeError(f"expected {m} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise IndexError(f"labels must lie in [0, {n})")
    Z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    rows = np.arange(m)
    loss = np.asarray((logsum - Z[rows, labels]).mean(), dtype=logits.data.dtype)

    def bw(g):
        p = np.exp(Z - logsum[:, None])
        p[rows, labels] -= 1
        return (p * (g / m),)

    return record("softmax_cross_entropy", (logits,), loss, bw)
