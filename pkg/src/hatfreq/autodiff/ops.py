"""Differentiable primitives.

Every function here takes Tensors (or array-likes, which are lifted to
constant Tensors) and returns a Tensor whose vector-Jacobian product is
registered for ``backward``.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .tensor import ShapeError, Tensor, as_tensor


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "add")
    return Tensor._result(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "sub")
    return Tensor._result(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "mul")
    return Tensor._result(
        a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)), "mul",
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "div")
    out = a.data / b.data
    return Tensor._result(
        out, (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = a.dtype.type(factor)
    return Tensor._result(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = a.dtype.type(exponent)
    return Tensor._result(
        a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power"
    )


# non-finite results raise NonFiniteError in Tensor._result, so numpy's own warning is noise
_QUIET = dict(over="ignore", divide="ignore", invalid="ignore")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(**_QUIET):
        out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(**_QUIET):
        out = np.log(a.data)
    return Tensor._result(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(**_QUIET):
        out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    out = (x * cdf).astype(x.dtype, copy=False)
    return Tensor._result(out, (a,), lambda g: ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),), "gelu")


# -- reductions and shape manipulation ---------------------------------------

def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    perm = list(range(a.ndim))
    perm[ax1], perm[ax2] = perm[ax2], perm[ax1]
    return transpose(a, perm)


def index(a, idx) -> Tensor:
    """Basic or advanced indexing (gradient scatters back with accumulation)."""
    a = as_tensor(a)
    out = a.data[idx]

    def vjp(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        if _is_basic_index(idx):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(np.array(out), (a,), vjp, "index")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    splits = np.cumsum(sizes)[:-1]
    return Tensor._result(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {exc}") from exc
    return Tensor._result(out, (a,), lambda g: (unbroadcast(g, a.shape),), "broadcast_to")


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding id out of range")
    return index(table, ids)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from exc

    def vjp(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), vjp, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with weight stored as in_features x out_features."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


# -- normalisation and probability ---------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    (axis,) = _norm_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (a,), vjp, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    (axis,) = _norm_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (a,), vjp, "log_softmax")


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    x = as_tensor(x)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(x.dtype, copy=False)

    def vjp(g):
        gx = inv / d * (d * g - g.sum(axis=-1, keepdims=True)
                        - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (gx.astype(x.dtype, copy=False),)

    out = Tensor._result(xhat, (x,), vjp, "layer_norm")
    if gamma is not None:
        gamma = as_tensor(gamma)
        if gamma.shape != (d,):
            raise ShapeError(f"layer_norm gamma shape {gamma.shape} != ({d},)")
        out = mul(out, gamma)
    if beta is not None:
        beta = as_tensor(beta)
        if beta.shape != (d,):
            raise ShapeError(f"layer_norm beta shape {beta.shape} != ({d},)")
        out = add(out, beta)
    return out


# -- convolution -------------------------------------------------------------

def conv2d(x, w, stride: int = 1, padding: int = 0, bias=None) -> Tensor:
    """Cross-correlation of N x C x H x W input with O x C x kh x kw kernels."""
    x, w = _pair(x, w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and kernel")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError("conv2d kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))  # n, ho, wo, o
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def vjp(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # o, c, kh, kw
        cols = np.tensordot(g, w.data, axes=([1], [0]))  # n, ho, wo, c, kh, kw
        gxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return gx, gw

    result = Tensor._result(out, (x, w), vjp, "conv2d")
    if bias is not None:
        result = add(result, reshape(as_tensor(bias), (1, o, 1, 1)))
    return result


def global_avg_pool(x) -> Tensor:
    return mean(x, axis=(2, 3))
