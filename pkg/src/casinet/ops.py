"""Differentiable primitives.

Every function takes :class:`Var` inputs (plain arrays and Tensors are accepted
and treated as constants) and returns a fresh :class:`Var`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .autograd import Param, Var, as_var, record


class ShapeError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c: float) -> Var:
    a = as_var(a)
    return record(a.data * c, (a,), lambda g: (g * c,))


def relu(x) -> Var:
    x = as_var(x)
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Var:
    x = as_var(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return record(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x) -> Var:
    x = as_var(x)
    y = np.exp(x.data)
    return record(y, (x,), lambda g: (g * y,))


def softmax(x, axis: int) -> Var:
    x = as_var(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), back)


def softmax_over_scales(x) -> Var:
    """Softmax across the scale axis of an (N, K, C, H, W) stack."""
    x = as_var(x)
    if x.data.ndim != 5:
        raise ShapeError(f"expected (N, K, C, H, W), got {x.shape}")
    return softmax(x, axis=1)


# --- shape plumbing --------------------------------------------------------

def reshape(x, shape) -> Var:
    x = as_var(x)
    src = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def broadcast_to(x, shape) -> Var:
    x = as_var(x)
    src = x.shape
    return record(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, src),))


def concat(xs: Sequence, axis: int = 1) -> Var:
    xs = [as_var(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def back(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return record(out, xs, back)


def concat_channels(xs: Sequence) -> Var:
    return concat(xs, axis=1)


def stack(xs: Sequence, axis: int = 1) -> Var:
    xs = [as_var(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"cannot stack differing shapes {sorted(shapes)}")
    out = np.stack([x.data for x in xs], axis=axis)
    return record(out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(xs))))


def take(x, index: int, axis: int = 1) -> Var:
    x = as_var(x)
    src = x.shape

    def back(g):
        full = np.zeros(src)
        idx = [slice(None)] * len(src)
        idx[axis] = index
        full[tuple(idx)] = g
        return (full,)

    return record(np.take(x.data, index, axis=axis), (x,), back)


# --- reductions ------------------------------------------------------------

def mean(x, axis) -> Var:
    x = as_var(x)
    src = x.shape
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    count = math.prod(src[a] for a in axes)
    out = x.data.mean(axis=axes)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axes), src) / count,)

    return record(out, (x,), back)


def sum_all(x) -> Var:
    x = as_var(x)
    return record(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def spatial_mean(x) -> Var:
    """Mean over H, W keeping dims: (N, C, H, W) -> (N, C, 1, 1)."""
    x = as_var(x)
    m = mean(x, axis=(2, 3))
    return reshape(m, x.shape[:2] + (1, 1))


def einsum(subscripts: str, a, b) -> Var:
    """Two-operand einsum; each operand index must occur in the other operand or the output."""
    a, b = as_var(a), as_var(b)
    ins, out_sub = subscripts.split("->")
    sa, sb = ins.split(",")
    y = np.einsum(subscripts, a.data, b.data, optimize=True)

    def back(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return record(y, (a, b), back)


def matmul(a, b) -> Var:
    """np.matmul semantics (batch dims broadcast); operands must be at least 2-D."""
    a, b = as_var(a), as_var(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(str(e)) from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.ascontiguousarray(np.swapaxes(b.data, -1, -2))), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)), g), b.shape)
        return ga, gb

    return record(y, (a, b), back)


def transpose(x, axes) -> Var:
    x = as_var(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


# --- convolutions ----------------------------------------------------------

def _tap_slices(offset: int, size: int):
    """(out slice, in slice) for a shift by ``offset`` along an axis, or None if empty."""
    if abs(offset) >= size:
        return None
    if offset >= 0:
        return slice(0, size - offset), slice(offset, size)
    return slice(-offset, size), slice(0, size + offset)


def _chan_mm(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(O, C) applied over channels of (N, C, h, w)."""
    n, c, h, wd = x.shape
    # strided operands make matmul skip BLAS
    w = np.ascontiguousarray(w)
    return np.matmul(w, x.reshape(n, c, h * wd)).reshape(n, w.shape[0], h, wd)


def _outer_sum(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sum over n, h, w of g[n, o] x[n, c] -> (O, C)."""
    n, o = g.shape[:2]
    c = x.shape[1]
    return np.matmul(g.reshape(n, o, -1), x.reshape(n, c, -1).transpose(0, 2, 1)).sum(axis=0)


def conv2d(x, w, b=None, dilation: int = 1) -> Var:
    """3x3 dilated cross-correlation with zero padding ``dilation`` (shape preserving)."""
    x, w = as_var(x), as_var(w)
    if dilation < 1 or int(dilation) != dilation:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, C, H, W), got {x.shape}")
    cout, cin, kh, kw = w.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d kernel must be 3x3, got {kh}x{kw}")
    n, c, h, wd = x.shape
    if c != cin:
        raise ShapeError(f"channel mismatch: input has {c}, kernel expects {cin}")
    taps = []
    for ky in range(3):
        ys = _tap_slices((ky - 1) * dilation, h)
        if ys is None:
            continue
        for kx in range(3):
            xs = _tap_slices((kx - 1) * dilation, wd)
            if xs is not None:
                taps.append((ky, kx, ys, xs))

    out = np.zeros((n, cout, h, wd))
    for ky, kx, (oy, iy), (ox, ix) in taps:
        out[:, :, oy, ox] += _chan_mm(w.data[:, :, ky, kx], x.data[:, :, iy, ix])
    parents = [x, w]
    if b is not None:
        b = as_var(b)
        out += b.data.reshape(1, -1, 1, 1)
        parents.append(b)

    def back(g):
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for ky, kx, (oy, iy), (ox, ix) in taps:
            gs = g[:, :, oy, ox]
            if gx is not None:
                gx[:, :, iy, ix] += _chan_mm(w.data[:, :, ky, kx].T, gs)
            if gw is not None:
                gw[:, :, ky, kx] = _outer_sum(gs, x.data[:, :, iy, ix])
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return record(out, parents, back)


def conv1x1(x, w, b=None) -> Var:
    """Per-position linear map over channels; ``w`` is (Cout, Cin, 1, 1) or (Cout, Cin)."""
    x, w = as_var(x), as_var(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv1x1 input must be (N, C, H, W), got {x.shape}")
    wm = w if w.data.ndim == 2 else reshape(w, w.shape[:2])
    if wm.shape[1] != x.shape[1]:
        raise ShapeError(f"channel mismatch: input has {x.shape[1]}, kernel expects {wm.shape[1]}")
    n, _, h, wd = x.shape
    y = matmul(wm, reshape(x, (n, x.shape[1], h * wd)))
    y = reshape(y, (n, wm.shape[0], h, wd))
    if b is not None:
        y = add(y, reshape(as_var(b), (1, -1, 1, 1)))
    return y


# --- normalization ---------------------------------------------------------

class BatchNormState:
    """Running statistics for eval-mode batch normalization."""

    def __init__(self, channels: int, momentum: float = 0.9):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum


def batchnorm(x, gamma, beta, mode: str = "train", eps: float = 1e-5,
              state: BatchNormState | None = None) -> Var:
    """Per-channel normalization of (N, C, H, W) over the (N, H, W) extent."""
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm input must be (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if mode == "train":
        if count < 2:
            raise ValueError("batchnorm in train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=axes)
        var = ((x.data - mu.reshape(1, -1, 1, 1)) ** 2).mean(axis=axes)
        if state is not None:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1 - m) * mu
            state.running_var = m * state.running_var + (1 - m) * var
    elif mode == "eval":
        if state is None:
            raise ValueError("eval-mode batchnorm needs running statistics")
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    g4 = gamma.data.reshape(1, -1, 1, 1)
    y = g4 * xhat + beta.data.reshape(1, -1, 1, 1)

    def back(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * g4
        if mode == "train":
            gx = (inv.reshape(1, -1, 1, 1) / count) * (
                count * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(1, -1, 1, 1)
        return gx, ggamma, gbeta

    return record(y, (x, gamma, beta), back)


# --- resampling ------------------------------------------------------------

def avg_pool2(x) -> Var:
    """2x2 average pooling with stride 2."""
    x = as_var(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even H, W, got {h}x{w}")
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return record(y, (x,), back)


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row i holds the weights of output i over inputs (align_corners=False)."""
    m = np.zeros((n_out, n_in))
    s = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * s - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[i, i0] += 1.0 - t
        m[i, i1] += t
    return m


def upsample_bilinear(x, size) -> Var:
    x = as_var(x)
    ho, wo = size
    my = bilinear_matrix(ho, x.shape[2])
    mx = bilinear_matrix(wo, x.shape[3])
    y = np.einsum("ih,nchw,jw->ncij", my, x.data, mx, optimize=True)

    def back(g):
        return (np.einsum("ih,ncij,jw->nchw", my, g, mx, optimize=True),)

    return record(y, (x,), back)


# --- loss ------------------------------------------------------------------

def log_softmax(x, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def ohem_mask(losses: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Boolean mask over a flat loss vector selecting the hardest ``keep_fraction``."""
    n = losses.size
    k = max(1, math.ceil(keep_fraction * n - 1e-9))
    mask = np.zeros(n, dtype=bool)
    if k >= n:
        mask[:] = True
        return mask
    order = np.argsort(-losses, kind="stable")
    mask[order[:k]] = True
    return mask


def cross_entropy(logits, labels: np.ndarray, class_weights: np.ndarray | None = None,
                  ignore_label: int = 255, keep_fraction: float = 1.0) -> Var:
    """Class-weighted mean negative log-softmax over scored pixels, optional OHEM.

    The OHEM selection is made on the unweighted per-pixel losses and treated as
    a constant in the backward pass.
    """
    logits = as_var(logits)
    n, k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} != {(n, h, w)}")
    if class_weights is None:
        class_weights = np.ones(k)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    valid = labels != ignore_label
    if not valid.any():
        raise ValueError("all pixels ignored")
    lab = np.where(valid, labels, 0)
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}) or equal ignore_label")
    logp = log_softmax(logits.data, axis=1)
    picked = np.take_along_axis(logp, lab[:, None], axis=1)[:, 0]
    per_pixel = -picked
    weight = np.where(valid, class_weights[lab], 0.0)
    if keep_fraction < 1.0:
        flat_idx = np.flatnonzero(valid)
        keep = ohem_mask(per_pixel.reshape(-1)[flat_idx], keep_fraction)
        sel = np.zeros(valid.size, dtype=bool)
        sel[flat_idx[keep]] = True
        weight = np.where(sel.reshape(valid.shape), weight, 0.0)
    z = weight.sum()
    loss = (weight * per_pixel).sum() / z

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, lab[:, None], 1.0, axis=1)
        return (g * (weight / z)[:, None] * (p - onehot),)

    return record(np.array(loss), (logits,), back)


__all__ = [
    "ShapeError", "Param", "Var", "add", "mul", "scale", "relu", "sigmoid", "exp", "softmax",
    "softmax_over_scales", "reshape", "broadcast_to", "concat", "concat_channels", "stack", "take",
    "mean", "sum_all", "spatial_mean", "einsum", "matmul", "transpose", "conv2d", "conv1x1", "BatchNormState", "batchnorm",
    "avg_pool2", "bilinear_matrix", "upsample_bilinear", "log_softmax", "ohem_mask", "cross_entropy",
]
