"""Differentiable operations on :class:`Tensor`.

Every function returns a new tensor and, when any input requires grad,
records a closure mapping the output gradient to the input gradients.
Reductions run in NumPy's fixed order, so results are bitwise reproducible
for a fixed BLAS thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .tensor import Tensor, as_tensor

__all__ = [
    "add", "sub", "mul", "matmul", "sum", "mean", "reshape", "transpose",
    "getitem", "concat", "pad2d", "crop2d", "roll", "relu", "gelu", "softmax",
    "layernorm", "batchnorm2d", "conv2d", "maxpool2", "upsample2", "gather",
    "linear", "linear_map", "mse", "BatchNormState",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        scale = float(b)

        def backward_scalar(g):
            return (g * scale,)

        return Tensor._from_op(a.data * scale, (a,), backward_scalar)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with NumPy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[0])

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


# -- reductions and shape manipulation -------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if not axes else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._from_op(out, (x,), backward)


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index], copy=True)

    def backward(g):
        full = np.zeros_like(x.data)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return Tensor._from_op(out, (x,), backward)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return Tensor._from_op(out, tensors, backward)


def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: str = "constant") -> Tensor:
    """Pad the last two axes by (top, bottom, left, right); mode constant or reflect."""
    top, bottom, left, right = pads
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    if mode not in ("constant", "reflect"):
        raise ValueError(f"unsupported pad mode {mode!r}")
    if mode == "constant":
        out = np.pad(x.data, width)

        def backward(g):
            h, w = g.shape[-2:]
            return (g[..., top:h - bottom, left:w - right],)

        return Tensor._from_op(out, (x,), backward)

    # reflect: route through an index map so the adjoint is an exact scatter-add
    h, w = x.shape[-2:]
    rows = np.pad(np.arange(h), (top, bottom), mode="reflect")
    cols = np.pad(np.arange(w), (left, right), mode="reflect")
    out = x.data[..., rows[:, None], cols[None, :]]

    def backward_reflect(g):
        full = np.zeros_like(x.data)
        tmp = np.zeros(x.shape[:-2] + (h, g.shape[-1]), dtype=g.dtype)
        for i, r in enumerate(rows):
            tmp[..., r, :] += g[..., i, :]
        for j, c in enumerate(cols):
            full[..., :, c] += tmp[..., :, j]
        return (full,)

    return Tensor._from_op(out, (x,), backward_reflect)


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height`` x ``width`` block of the last two axes."""
    return getitem(x, (Ellipsis, slice(0, height), slice(0, width)))


def roll(x: Tensor, shifts: tuple[int, int], axes: tuple[int, int] = (-2, -1)) -> Tensor:
    out = np.roll(x.data, shifts, axis=axes)

    def backward(g):
        return (np.roll(g, tuple(-s for s in shifts), axis=axes),)

    return Tensor._from_op(out, (x,), backward)


# -- activations and normalisation -------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(out, (x,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor._from_op(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (x,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def backward(g):
        gx = gg = gb = None
        lead = tuple(range(x.ndim - 1))
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=lead)
        if beta.requires_grad:
            gb = g.sum(axis=lead)
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward)


class BatchNormState:
    """Running statistics for one batch-norm layer (not trainable)."""

    def __init__(self, channels: int, momentum: float = 0.1, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                training: bool, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation of an (N, C, H, W) tensor.

    Training mode normalises with the batch statistics (biased variance) and
    moves the running estimates by ``momentum`` using the unbiased variance.
    Eval mode uses the running estimates, which start at mean 0, variance 1.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ValueError(f"batchnorm2d expects (N, {gamma.shape[0]}, H, W), got {x.shape}")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(shape)
        var = (xc * xc).mean(axis=axes)
        count = x.size // x.shape[1]
        m = state.momentum
        unbiased = var * count / max(count - 1, 1)
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
        xc = x.data - mu.reshape(shape)
    inv = (1.0 / np.sqrt(var + eps)).reshape(shape)
    xhat = xc * inv
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=axes)
        if beta.requires_grad:
            gb = g.sum(axis=axes)
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if training:
                n = x.size // x.shape[1]
                gx = inv / n * (n * gxhat - gxhat.sum(axis=axes, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            else:
                gx = gxhat * inv
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward)


# -- convolution and resampling ------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(Cin*kh*kw, N*Ho*Wo) patch matrix of an already padded (N, Cin, H, W) array."""
    cin = xp.shape[1]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(cin * kh * kw, -1)


def _correlate(cols: np.ndarray, w2: np.ndarray, n: int, ho: int, wo: int) -> np.ndarray:
    # (N*Ho*Wo, K) @ (K, Cout) runs faster than the transposed product for thin filters
    out = cols.T @ w2.T
    return np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of (N, Cin, H, W) with (Cout, Cin, k, k) via im2col.

    Each output element is one BLAS dot product of the flattened (Cin, k, k)
    patch with the flattened filter. For stride 1 the input gradient is the
    full correlation of the output gradient with the flipped kernel, again
    through im2col; other strides scatter the patch gradients back.
    """
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, weight expects {cin_w}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output extent would be non-positive ({ho}x{wo})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = weight.data.reshape(cout, -1)
    out = _correlate(cols, w2, n, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            if stride == 1 and padding <= min(kh, kw) - 1:
                ph, pw = kh - 1 - padding, kw - 1 - padding
                gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else g
                flipped = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
                gx = _correlate(_im2col(gp, kh, kw, 1, h, w), flipped, n, h, w)
            else:
                g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
                gcols = (w2.T @ g2).reshape(cin, kh, kw, n, ho, wo)
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                            gcols[:, i, j].transpose(1, 0, 2, 3)
                gx = gxp[:, :, padding:padding + h, padding:padding + w]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first in scan order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        gx = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor._from_op(out, (x,), backward)


def upsample2(x: Tensor, mode: str = "nearest") -> Tensor:
    if mode != "nearest":
        raise ValueError("only nearest-neighbour upsampling is implemented")
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        *lead, h2, w2 = g.shape
        return (g.reshape(*lead, h2 // 2, 2, w2 // 2, 2).sum(axis=(-3, -1)),)

    return Tensor._from_op(out, (x,), backward)


# -- indexing and constant linear maps ------------------------------------------------

def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``table`` picked by an integer array; result shape index.shape + table.shape[1:]."""
    index = np.asarray(index)
    out = table.data[index]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return Tensor._from_op(out, (table,), backward)


def linear_map(x: Tensor, forward, adjoint, out_shape=None) -> Tensor:
    """Apply a fixed linear operator given as a forward/adjoint function pair."""
    out = np.asarray(forward(x.data))
    if out_shape is not None:
        out = out.reshape(out_shape)

    def backward(g):
        return (np.asarray(adjoint(g)).reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error (mean reduction)."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = np.asarray(np.mean(diff * diff))
    scale = 2.0 / diff.size

    def backward(g):
        gp = g * scale * diff if pred.requires_grad else None
        gt = -g * scale * diff if target.requires_grad else None
        return gp, gt

    return Tensor._from_op(out, (pred, target), backward)
