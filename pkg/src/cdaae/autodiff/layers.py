"""Differentiable layer primitives used by the CDAAE networks.

Convolutions are NCHW with OIKK kernels and use an im2col formulation so the
heavy lifting is a single matrix product per call.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _wrap, concat  # noqa: F401  (re-exported)

LOG_EPS = 1e-7
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, Hp, Wp) -> (N*Ho*Wo, C*K*K)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : stride * ho : stride, : stride * wo : stride]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    # adjoint of _im2col followed by un-padding
    n, c, h, w = shape
    cols = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def _check_conv_args(stride: int, padding: int) -> None:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with symmetric zero padding."""
    _check_conv_args(stride, padding)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIKK kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, i, k, k2 = kernel.shape
    if k != k2:
        raise ValueError(f"only square kernels are supported, got {k}x{k2}")
    if c != i:
        raise ValueError(f"conv2d channel mismatch: input has {c} channels, kernel expects {i}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {h}x{w}, kernel {k}, stride {stride}, padding {padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = kernel.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if kernel.requires_grad:
            kernel._accum((gmat.T @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(gmat.sum(axis=0))
        if x.requires_grad:
            x._accum(_col2im(gmat @ wmat, x.shape, k, stride, padding, ho, wo))

    return Tensor._make(np.ascontiguousarray(out), parents, bw)


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution: the adjoint of :func:`conv2d` w.r.t. its input.

    ``kernel`` has shape (C_in, C_out, K, K), i.e. the OIKK kernel of the conv2d
    this operation is the adjoint of.
    """
    _check_conv_args(stride, padding)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv_transpose2d expects NCHW input and (Cin, Cout, K, K) kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    ci, co, k, k2 = kernel.shape
    if k != k2:
        raise ValueError(f"only square kernels are supported, got {k}x{k2}")
    if c != ci:
        raise ValueError(f"conv_transpose2d channel mismatch: input has {c} channels, kernel expects {ci}")
    ho = conv_transpose_output_size(h, k, stride, padding)
    wo = conv_transpose_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d output would be empty for input {h}x{w}")

    wmat = kernel.data.reshape(ci, -1)
    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, ci)
    out = _col2im(xmat @ wmat, (n, co, ho, wo), k, stride, padding, h, w)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        cols = _im2col(gp, k, stride, h, w)
        if kernel.requires_grad:
            kernel._accum((xmat.T @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x._accum((cols @ wmat.T).reshape(n, h, w, ci).transpose(0, 3, 1, 2))

    return Tensor._make(out, parents, bw)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization for (N, C) or (N, C, H, W) inputs.

    In training mode the batch statistics are used and the running buffers are
    updated in place as ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim not in (2, 4):
        raise ValueError(f"batchnorm expects 2-D or 4-D input, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm gamma/beta must have length {c}, got {gamma.shape} and {beta.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)

    if training:
        if x.shape[0] < 2:
            raise ValueError("batchnorm in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // c
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    inv_std_b = inv_std.reshape(bshape).astype(x.data.dtype)

    def bw(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gamma.data.reshape(bshape)
            if training:
                gx = gx - gx.mean(axis=axes, keepdims=True) - xhat * (gx * xhat).mean(axis=axes, keepdims=True)
            x._accum(gx * inv_std_b)

    return Tensor._make(out.astype(x.data.dtype, copy=False), (x, gamma, beta), bw)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight shaped (in, out)."""
    if x.ndim != 2:
        raise ValueError(f"dense expects (N, features) input, got shape {x.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense dimension mismatch: input has {x.shape[1]} features, weight expects {weight.shape[0]}")
    out = x @ weight
    return out if bias is None else out + bias


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: x._accum(g * mask))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: x._accum(g * (1 - out * out)))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype, copy=False)
    return Tensor._make(out, (x,), lambda g: x._accum(g * out * (1 - out)))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        x._accum(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return Tensor._make(out, (x,), bw)


def safe_log(p: Tensor, eps: float = LOG_EPS) -> Tensor:
    """log of ``p`` clipped to [eps, 1]."""
    return p.clip(eps, 1.0).log()


def cross_entropy(pred: Tensor, target, eps: float = LOG_EPS) -> Tensor:
    """Batch mean of ``-sum(target * log(pred))`` over rows.

    ``pred`` holds probability rows; ``target`` is a probability/one-hot array or
    tensor of the same shape. Targets passed as tensors keep their graph, so
    callers wanting a fixed soft target should detach it first.
    """
    target = _wrap(target)
    if pred.shape != target.shape:
        raise ValueError(f"cross_entropy shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.ndim != 2:
        raise ValueError(f"cross_entropy expects (N, K) rows, got shape {pred.shape}")
    return -(target * safe_log(pred, eps)).sum(axis=1).mean()


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error averaged over every element (per-pixel, then per-sample)."""
    b = _wrap(b)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).mean()


def one_hot(labels: np.ndarray, k: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], k), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out
