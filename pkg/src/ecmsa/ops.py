"""Differentiable ops over :class:`~ecmsa.tensor.Tensor`.

Spatial ops take ``(C, H, W)`` or batched ``(B, C, H, W)`` inputs.  The only
implicit broadcast is a per-channel vector over the two spatial axes
(:func:`mul_channel`) and a trailing-axis bias (:func:`add_bias`); every
other binary op requires identical shapes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError
from .tensor import Tensor, as_tensor, make_op

BCE_CLAMP = 1e-7


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return make_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return make_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_op("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return make_op("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_op("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_op("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def mul_channel(x, s) -> Tensor:
    """``x[..., c, h, w] * s[..., c]``: a channel vector broadcast over H and W."""
    x, s = as_tensor(x), as_tensor(s)
    if x.ndim < 3 or s.ndim < 1 or s.shape != x.shape[:-2][-s.ndim:]:
        raise ShapeError(f"mul_channel: cannot broadcast {s.shape} over {x.shape}")
    xd, sd = x.data, s.data
    se = sd[..., None, None]

    def backward(g):
        gs = (g * xd).sum(axis=(-2, -1))
        return g * se, _unbroadcast(gs, sd.shape)

    return make_op("mul_channel", xd * se, (x, s), backward)


def add_bias(x, b) -> Tensor:
    """``x[..., n] + b[n]``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"add_bias: bias {b.shape} does not match trailing axis of {x.shape}")
    return make_op("add_bias", x.data + b.data, (x, b), lambda g: (g, _unbroadcast(g, b.shape)))


# -- shape ---------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return make_op("reshape", out, (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[:-2] + (x.ndim - 1, x.ndim - 2)
    inv = np.argsort(axes)
    return make_op("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(xs, axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return make_op("concat", out, tuple(xs), lambda g: tuple(np.split(g, cuts, axis=axis)))


def hflip(x) -> Tensor:
    x = as_tensor(x)
    return make_op("hflip", x.data[..., ::-1], (x,), lambda g: (g[..., ::-1],))


# -- reductions ----------------------------------------------------------------

def sum(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return make_op("sum", np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return make_op("mean", np.array(x.data.mean()), (x,),
                   lambda g: (np.full(x.shape, float(g) / n),))


def pool_avg_global(x) -> Tensor:
    """Per-channel spatial mean: ``(..., C, H, W) -> (..., C)``."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"pool_avg_global expects (..., C, H, W), got {x.shape}")
    h, w = x.shape[-2:]
    inv = 1.0 / (h * w)

    def backward(g):
        return (np.broadcast_to(g[..., None, None] * inv, x.shape).copy(),)

    return make_op("pool_avg_global", x.data.mean(axis=(-2, -1)), (x,), backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_op("matmul", ad @ bd, (a, b), backward)


def linear(x, w, b=None) -> Tensor:
    """``x @ w.T + b`` with ``w`` of shape ``(out, in)``."""
    x = as_tensor(x)
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, x.shape[0])), transpose(w)), (w.shape[0],))
    else:
        y = matmul(x, transpose(w))
    return y if b is None else add_bias(y, b)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, with row-max subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_op("softmax_rows", s, (x,), backward)


# -- convolution and resampling -------------------------------------------------

def _correlate(xd, wd, p):
    """Batched stride-1 cross-correlation on raw arrays; returns (out, im2col matrix)."""
    nb, ci, h, wdt = xd.shape
    co, _, k, _ = wd.shape
    ho, wo = h + 2 * p - k + 1, wdt + 2 * p - k + 1
    if p:
        xp = np.zeros((nb, ci, h + 2 * p, wdt + 2 * p))
        xp[:, :, p:p + h, p:p + wdt] = xd
    else:
        xp = xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B, C, Ho, Wo, k, k
    # rows (c, i, j), columns (b, y, x): the innermost axis stays contiguous
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(ci * k * k, nb * ho * wo)
    out = (wd.reshape(co, ci * k * k) @ cols).reshape(co, nb, ho, wo).transpose(1, 0, 2, 3)
    return out, cols


def conv2d(x, w, b=None, padding: int | None = None) -> Tensor:
    """2-D cross-correlation, stride 1.

    ``x``: ``(C_in, H, W)`` or ``(B, C_in, H, W)``; ``w``: ``(C_out, C_in, k, k)``
    with odd ``k``.  ``padding`` defaults to ``(k - 1) // 2`` (same size).
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d: weight must be (C_out, C_in, k, k) with odd k, got {w.shape}")
    if x.ndim not in (3, 4) or x.shape[-3] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match weight {w.shape}")
    co, ci, k, _ = w.shape
    if b is not None:
        b = as_tensor(b)
        if b.shape != (co,):
            raise ShapeError(f"conv2d: bias {b.shape} != ({co},)")
    p = (k - 1) // 2 if padding is None else int(padding)
    if not 0 <= p <= k - 1:
        raise ShapeError(f"conv2d: padding must lie in [0, {k - 1}], got {p}")

    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    nb, _, h, wd = xd.shape
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    out, cols = _correlate(xd, w.data, p)
    if b is not None:
        out = out + b.data[:, None, None]
    out = np.ascontiguousarray(out if batched else out[0])

    def backward(g):
        g4 = g if batched else g[None]
        gm = g4.transpose(1, 0, 2, 3).reshape(co, -1)
        gw = (gm @ cols.T).reshape(w.shape) if w.requires_grad else None
        gb = g4.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            # stride 1: input grad is a correlation with the flipped, transposed kernel
            wf = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(_correlate(g4, wf, k - 1 - p)[0])
            if not batched:
                gx = gx[0]
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_op("conv2d", out, parents, backward)


def pool_max_2x2(x) -> Tensor:
    """2x2 max pooling, stride 2. Ties route the gradient to the first maximum."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if x.ndim < 2 or h % 2 or w % 2:
        raise ShapeError(f"pool_max_2x2 needs even spatial extents, got {x.shape}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(*lead, h // 2, 2, w // 2, 2)
    nd = len(lead)
    blocks = np.moveaxis(blocks, nd + 1, nd + 2).reshape(*lead, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros(blocks.shape)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        gx = onehot.reshape(*lead, h // 2, w // 2, 2, 2)
        gx = np.moveaxis(gx, nd + 1, nd + 2).reshape(x.shape)
        return (gx,)

    return make_op("pool_max_2x2", out, (x,), backward)


def upsample_nearest_2x(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("upsample_nearest_2x needs at least 2 axes")
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    lead = x.shape[:-2]
    h, w = x.shape[-2:]

    def backward(g):
        return (g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1)),)

    return make_op("upsample_nearest_2x", out, (x,), backward)


# -- loss ------------------------------------------------------------------------

def bce_loss(pred, target) -> Tensor:
    """Mean binary cross-entropy; ``pred`` is clamped to ``[1e-7, 1 - 1e-7]``."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape("bce_loss", pred, target)
    t = target.data
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValidationError("bce_loss target must contain only 0 and 1")
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    inside = (pred.data >= BCE_CLAMP) & (pred.data <= 1.0 - BCE_CLAMP)

    def backward(g):
        return (np.asarray(g).reshape(()) * inside * (p - t) / (p * (1.0 - p)) / n, None)

    return make_op("bce_loss", np.array(loss), (pred, target), backward)
