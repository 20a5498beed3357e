"""Differentiable tensor operations.

Everything the network needs: 1-D convolution along the time axis, ceil-mode
max pooling, batch normalization, ReLU, affine maps, sigmoid cross-entropy,
plus the small glue ops (add, flatten, concat, square_sum, scale) used for
residual connections and the L2 penalty.

Convolution is evaluated as one matrix product per call: windows of the
padded input are gathered into a column matrix (im2col) and multiplied with
the reshaped kernel. The backward pass rebuilds the column matrix instead of
caching it, trading a memcpy for a much smaller peak footprint.
"""

from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .autodiff import Tensor, needs_grad, record
from .errors import ConfigError, LabelError, ShapeError

_op_counter = itertools.count()


def _auto_label(kind: str, label: Optional[str]) -> str:
    return label if label is not None else f"{kind}#{next(_op_counter)}"


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"mixed dtypes in one op: {sorted(d.name for d in dtypes)}")


# ---------------------------------------------------------------------------
# convolution

def _conv_geometry(length: int, kernel: int, stride: int, padding: str):
    if padding == "same":
        out_len = -(-length // stride)
        total = max((out_len - 1) * stride + kernel - length, 0)
        left = total // 2
        return out_len, left, total - left
    if padding == "valid":
        if kernel > length:
            raise ShapeError(f"valid conv needs K <= L, got K={kernel} L={length}")
        return (length - kernel) // stride + 1, 0, 0
    raise ValueError(f"unknown padding mode {padding!r}")


def _pad_time_axis(xt: np.ndarray, left: int, right: int) -> np.ndarray:
    """Zero-pad the middle (time) axis of a channels-last [B, L, C] array."""
    if not (left or right):
        return xt
    b, length, c = xt.shape
    out = np.zeros((b, length + left + right, c), dtype=xt.dtype)
    out[:, left:left + length, :] = xt
    return out


def _window_cols(xt_p: np.ndarray, out_len: int, kernel: int, stride: int) -> np.ndarray:
    """Channels-last im2col: [B, Lp, C] -> contiguous [B*out_len, K*C].

    Each output row is a window of K consecutive time steps; in channels-last
    memory those K*C values already sit contiguously, so materializing the
    strided view costs one streaming memcpy per row.
    """
    assert xt_p.flags["C_CONTIGUOUS"]
    b, lp, c = xt_p.shape
    item = xt_p.itemsize
    windows = as_strided(xt_p, (b, out_len, kernel * c),
                         (lp * c * item, stride * c * item, item))
    return np.ascontiguousarray(windows).reshape(b * out_len, kernel * c)


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: str = "same", label: Optional[str] = None) -> Tensor:
    """Cross-correlation along the last (time) axis.

    ``x`` is [C_in, L] or [B, C_in, L]; ``weight`` is [C_out, C_in, K].
    ``same`` padding yields ceil(L / stride) output steps, zero padded;
    ``valid`` yields only fully covered windows.

    Internally the batch is transposed to channels-last once, windows are
    gathered into a column matrix and the whole layer reduces to one GEMM.
    The stride-1 input gradient is itself a convolution (with the kernel
    flipped and channel axes swapped), so the backward pass is two GEMMs and
    never scatters.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if weight.data.ndim != 3:
        raise ShapeError(f"conv weight must be [C_out, C_in, K], got {weight.shape}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"conv input must be 2- or 3-dimensional, got {x.shape}")
    _check_same_dtype(x, weight, *( [bias] if bias is not None else [] ))
    c_out, c_in, kernel = weight.shape
    if kernel < 1:
        raise ShapeError(f"kernel size must be >= 1, got {kernel}")
    batch, channels, length = xd.shape
    if channels != c_in:
        raise ShapeError(
            f"conv input has {channels} channels but weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv bias must be [{c_out}], got {bias.shape}")

    out_len, left, right = _conv_geometry(length, kernel, stride, padding)
    xt_p = _pad_time_axis(np.ascontiguousarray(xd.transpose(0, 2, 1)), left, right)
    cols = _window_cols(xt_p, out_len, kernel, stride)
    # weight as [K*C_in, C_out] matching the (k, c) layout of the columns
    w_fwd = np.ascontiguousarray(weight.data.transpose(2, 1, 0)).reshape(
        kernel * c_in, c_out)
    out2 = cols @ w_fwd
    if bias is not None:
        out2 += bias.data[None, :]
    out_data = np.ascontiguousarray(
        out2.reshape(batch, out_len, c_out).transpose(0, 2, 1))
    if squeeze:
        out_data = out_data[0]
    out = Tensor(out_data, name=label)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if needs_grad(*inputs):
        def vjp(g: np.ndarray):
            g3 = g[None] if squeeze else g
            gt = np.ascontiguousarray(g3.transpose(0, 2, 1))   # [B, L_out, C_out]
            g2 = gt.reshape(batch * out_len, c_out)
            grads = []
            if x.requires_grad or x._taped:
                if stride == 1:
                    # dx = full correlation of g with the flipped, swapped kernel
                    w_bwd = np.ascontiguousarray(
                        weight.data[:, :, ::-1].transpose(2, 0, 1)).reshape(
                        kernel * c_out, c_in)
                    gp = _pad_time_axis(gt, kernel - 1 - left,
                                        kernel - 1 - (left + right) + left)
                    dcols = _window_cols(gp, length, kernel, 1)
                    dxt = (dcols @ w_bwd).reshape(batch, length, c_in)
                    dx = np.ascontiguousarray(dxt.transpose(0, 2, 1))
                else:
                    # strided case: scatter column gradients back per tap
                    dcols = (g2 @ w_fwd.T).reshape(batch, out_len, kernel, c_in)
                    dxt_p = np.zeros_like(xt_p)
                    span = (out_len - 1) * stride + 1
                    for k in range(kernel):
                        dxt_p[:, k:k + span:stride, :] += dcols[:, :, k, :]
                    dx = np.ascontiguousarray(
                        dxt_p[:, left:left + length, :].transpose(0, 2, 1))
                grads.append(dx[0] if squeeze else dx)
            else:
                grads.append(None)
            if weight.requires_grad or weight._taped:
                cols_b = _window_cols(xt_p, out_len, kernel, stride)
                dw = (cols_b.T @ g2).reshape(kernel, c_in, c_out)
                grads.append(np.ascontiguousarray(dw.transpose(2, 1, 0)))
            else:
                grads.append(None)
            if bias is not None:
                grads.append(g2.sum(axis=0) if (bias.requires_grad or bias._taped) else None)
            return grads

        record(_auto_label("conv1d", label), out, inputs, vjp)
    return out


# ---------------------------------------------------------------------------
# pooling

def maxpool1d(x: Tensor, size: int = 2, stride: int = 2,
              label: Optional[str] = None) -> Tensor:
    """Ceil-mode max pooling over the time axis; the last window may be partial.

    Gradient flows to the maximal element of each window, first index on ties.
    """
    if size < 1 or stride < 1:
        raise ValueError(f"pool size and stride must be >= 1, got {size}, {stride}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"pool input must be 2- or 3-dimensional, got {x.shape}")
    batch, channels, length = xd.shape
    if length < 1:
        raise ShapeError("pool input has empty time axis")

    out_len = -(-length // stride)
    padded_len = (out_len - 1) * stride + size
    if padded_len > length:
        xp = np.full((batch, channels, padded_len), -np.inf, dtype=xd.dtype)
        xp[:, :, :length] = xd
    else:
        xp = xd
    sb, sc, sl = xp.strides
    windows = as_strided(xp, (batch, channels, out_len, size), (sb, sc, sl * stride, sl))
    idx = windows.argmax(axis=3)
    out_data = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0].copy()
    out = Tensor(out_data[0] if squeeze else out_data, name=label)

    if needs_grad(x):
        positions = idx + np.arange(out_len, dtype=idx.dtype)[None, None, :] * stride

        def vjp(g: np.ndarray):
            g3 = g[None] if squeeze else g
            dx = np.zeros((batch, channels, length), dtype=xd.dtype)
            offsets = (np.arange(batch)[:, None, None] * channels
                       + np.arange(channels)[None, :, None]) * length
            flat_idx = (positions + offsets).ravel()
            dxf = dx.reshape(-1)
            if stride >= size:
                # windows are disjoint, each input position appears at most once
                dxf[flat_idx] = g3.ravel()
            else:
                np.add.at(dxf, flat_idx, g3.ravel())
            return [dx[0] if squeeze else dx]

        record(_auto_label("maxpool1d", label), out, (x,), vjp)
    return out


# ---------------------------------------------------------------------------
# batch normalization

class BnState:
    """Per-channel running mean and variance with momentum 0.9.

    The first training batch seeds the statistics directly; later batches
    blend in with ``running = momentum * running + (1 - momentum) * batch``.
    Variance is stored biased, matching what eval-mode normalization uses.
    """

    __slots__ = ("mean", "var", "momentum")

    def __init__(self, momentum: float = 0.9):
        self.mean: Optional[np.ndarray] = None
        self.var: Optional[np.ndarray] = None
        self.momentum = momentum

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        if self.mean is None:
            self.mean = mean.copy()
            self.var = var.copy()
        else:
            m = self.momentum
            self.mean = m * self.mean + (1.0 - m) * mean
            self.var = m * self.var + (1.0 - m) * var


BN_EPS = 1e-5


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BnState,
              mode: str = "train", label: Optional[str] = None) -> Tensor:
    """Per-channel normalization of a [B, C, L] tensor.

    Train mode normalizes with batch statistics over (B, L) and updates the
    running stats; eval mode uses the running stats and requires them to be
    initialized.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"batchnorm input must be [B, C, L], got {x.shape}")
    _check_same_dtype(x, gamma, beta)
    batch, channels, length = x.data.shape
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"gamma/beta must be [{channels}], got {gamma.shape} and {beta.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    if mode == "train":
        n = batch * length
        if n < 2:
            raise ShapeError("train-mode batchnorm needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        state.update(mu.astype(x.data.dtype), var.astype(x.data.dtype))
    else:
        if not state.initialized:
            raise ConfigError(
                "eval-mode batchnorm called before running stats were initialized")
        mu = state.mean.astype(x.data.dtype)
        var = state.var.astype(x.data.dtype)
        n = 0

    inv = 1.0 / np.sqrt(var + np.asarray(BN_EPS, dtype=x.data.dtype))
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    out = Tensor(gamma.data[None, :, None] * xhat + beta.data[None, :, None], name=label)

    if needs_grad(x, gamma, beta):
        def vjp(g: np.ndarray):
            dgamma = (g * xhat).sum(axis=(0, 2)) if (gamma.requires_grad or gamma._taped) else None
            dbeta = g.sum(axis=(0, 2)) if (beta.requires_grad or beta._taped) else None
            if x.requires_grad or x._taped:
                dxhat = g * gamma.data[None, :, None]
                if mode == "train":
                    sum_dxhat = dxhat.sum(axis=(0, 2))
                    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2))
                    dx = (inv[None, :, None] / n) * (
                        n * dxhat
                        - sum_dxhat[None, :, None]
                        - xhat * sum_dxhat_xhat[None, :, None])
                else:
                    dx = dxhat * inv[None, :, None]
            else:
                dx = None
            return [dx, dgamma, dbeta]

        record(_auto_label("batchnorm", label), out, (x, gamma, beta), vjp)
    return out


# ---------------------------------------------------------------------------
# pointwise and dense

def relu(x: Tensor, label: Optional[str] = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), name=label)
    if needs_grad(x):
        def vjp(g: np.ndarray):
            return [g * (out.data > 0)]
        record(_auto_label("relu", label), out, (x,), vjp)
    return out


def affine(x: Tensor, weight: Tensor, bias: Tensor,
           label: Optional[str] = None) -> Tensor:
    """Dense map: out = x @ weight.T + bias, with x [B, N] and weight [M, N]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(
            f"affine expects 2-d input and weight, got {x.shape} and {weight.shape}")
    _check_same_dtype(x, weight, bias)
    m, n = weight.shape
    if x.shape[1] != n:
        raise ShapeError(f"affine inner dims disagree: input {x.shape}, weight {weight.shape}")
    if bias.shape != (m,):
        raise ShapeError(f"affine bias must be [{m}], got {bias.shape}")
    out = Tensor(x.data @ weight.data.T + bias.data[None, :], name=label)
    if needs_grad(x, weight, bias):
        def vjp(g: np.ndarray):
            dx = g @ weight.data if (x.requires_grad or x._taped) else None
            dw = g.T @ x.data if (weight.requires_grad or weight._taped) else None
            db = g.sum(axis=0) if (bias.requires_grad or bias._taped) else None
            return [dx, dw, db]
        record(_auto_label("affine", label), out, (x, weight, bias), vjp)
    return out


# ---------------------------------------------------------------------------
# loss

def sigmoid_cross_entropy(logits: Tensor, labels: Tensor,
                          label: Optional[str] = None) -> Tensor:
    """Numerically stable binary cross-entropy on logits.

    Per element: max(z, 0) - z*y + log(1 + exp(-|z|)). Reduction is the sum
    over heads and the mean over the batch, so the gradient on each logit is
    (sigmoid(z) - y) / B.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be [B, H], got {logits.shape}")
    if logits.shape != labels.shape:
        raise ShapeError(f"labels shape {labels.shape} != logits shape {logits.shape}")
    if logits.shape[1] < 1:
        raise ShapeError("need at least one head")
    y = labels.data
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("labels must be exactly 0 or 1")
    z = logits.data
    batch = z.shape[0]
    per_elem = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(per_elem.sum() / batch, dtype=z.dtype), name=label)
    if needs_grad(logits):
        def vjp(g: np.ndarray):
            dz = (_sigmoid(z) - y) * (g / batch)
            return [dz.astype(z.dtype, copy=False), None]
        record(_auto_label("sigmoid_ce", label), out, (logits, labels), vjp)
    return out


# ---------------------------------------------------------------------------
# glue

def add(a: Tensor, b: Tensor, label: Optional[str] = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs matching shapes, got {a.shape} and {b.shape}")
    _check_same_dtype(a, b)
    out = Tensor(a.data + b.data, name=label)
    if needs_grad(a, b):
        def vjp(g: np.ndarray):
            need_a = a.requires_grad or a._taped
            need_b = b.requires_grad or b._taped
            # hand out distinct buffers when both sides accumulate
            return [g if need_a else None,
                    (g.copy() if need_a else g) if need_b else None]
        record(_auto_label("add", label), out, (a, b), vjp)
    return out


def flatten(x: Tensor, label: Optional[str] = None) -> Tensor:
    """[B, ...] -> [B, prod(rest)]."""
    if x.data.ndim < 2:
        raise ShapeError(f"flatten expects at least 2 dims, got {x.shape}")
    batch = x.shape[0]
    out = Tensor(x.data.reshape(batch, -1), name=label)
    if needs_grad(x):
        def vjp(g: np.ndarray):
            return [g.reshape(x.data.shape)]
        record(_auto_label("flatten", label), out, (x,), vjp)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1,
           label: Optional[str] = None) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    _check_same_dtype(*tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), name=label)
    if needs_grad(*tensors):
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g: np.ndarray):
            pieces = np.split(g, splits, axis=axis)
            return [p if (t.requires_grad or t._taped) else None
                    for p, t in zip(pieces, tensors)]
        record(_auto_label("concat", label), out, tuple(tensors), vjp)
    return out


def square_sum(x: Tensor, label: Optional[str] = None) -> Tensor:
    """Scalar sum of squared entries; the L2 penalty building block."""
    out = Tensor(np.asarray((x.data * x.data).sum(), dtype=x.data.dtype), name=label)
    if needs_grad(x):
        def vjp(g: np.ndarray):
            return [2.0 * x.data * g]
        record(_auto_label("square_sum", label), out, (x,), vjp)
    return out


def scale(x: Tensor, factor: float, label: Optional[str] = None) -> Tensor:
    f = np.asarray(factor, dtype=x.data.dtype)
    out = Tensor(x.data * f, name=label)
    if needs_grad(x):
        def vjp(g: np.ndarray):
            return [g * f]
        record(_auto_label("scale", label), out, (x,), vjp)
    return out


def sigmoid_values(z: np.ndarray) -> np.ndarray:
    """Plain sigmoid on raw arrays, used when converting logits to scores."""
    return _sigmoid(np.asarray(z))
