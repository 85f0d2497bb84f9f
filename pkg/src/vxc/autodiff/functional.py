"""Differentiable primitives.

Each function computes its forward value with numpy and records a closure
that maps the output gradient to input gradients.  Convolutions use the
cross-correlation convention with zero padding.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from vxc.autodiff.tensor import Tensor, make_result
from vxc.exceptions import ConfigurationError, DimensionError

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "abs",
    "sum", "mean", "reshape", "transpose", "getitem", "concat", "stack",
    "matmul", "conv2d", "conv3d", "maxpool2d", "depth_to_space",
    "space_to_depth", "depth_to_space3d", "space_to_depth3d", "sigmoid",
    "tanh", "leaky_relu", "softmax", "activation", "clip",
]


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b, Tensor(0.0)) if not isinstance(b, Tensor) else b
    return _lift(a, b), b


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def back(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), back, "div")


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def power(x: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def back(g):
        return (g * exponent * x.data ** (exponent - 1.0),)

    return make_result(x.data ** exponent, (x,), back, "power")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- reductions and shape ops ----------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return make_result(np.asarray(out), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return div(sum(x, axis=axis, keepdims=keepdims), count)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    basic = _is_basic(index)

    def back(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(out, copy=True), (x,), back, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tensors, back, "stack")


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors; dA = dC Bᵀ, dB = Aᵀ dC."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def back(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), back, "matmul")


def _conv(x: Tensor, w: Tensor, bias, stride: int, padding: int, nd: int, name: str) -> Tensor:
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise DimensionError(f"{name} expects {nd + 2}-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"{name} channel mismatch: input {x.shape} vs weight {w.shape}")
    if stride < 1:
        raise ConfigurationError(f"{name} stride must be >= 1, got {stride}")
    kernel = w.shape[2:]
    spatial = x.shape[2:]
    padded = tuple(s + 2 * padding for s in spatial)
    if any(k > p for k, p in zip(kernel, padded)):
        raise ConfigurationError(f"{name} kernel {kernel} larger than padded input {padded}")
    out_shape = tuple((p - k) // stride + 1 for p, k in zip(padded, kernel))

    # channels-last padded input; one matmul per kernel offset
    pad = [(0, 0)] + [(padding, padding)] * nd + [(0, 0)]
    xl = np.moveaxis(x.data, 1, -1)
    xl = np.pad(xl, pad) if padding else np.ascontiguousarray(xl)
    wl = np.ascontiguousarray(np.moveaxis(w.data, (0, 1), (-1, -2)))  # (k..., C, F)
    offsets = list(itertools.product(*(range(k) for k in kernel)))

    def window(off):
        return (slice(None),) + tuple(slice(o, o + n * stride, stride) for o, n in zip(off, out_shape))

    acc = np.zeros((x.shape[0],) + out_shape + (w.shape[0],), dtype=np.result_type(x.data, w.data))
    for off in offsets:
        acc += xl[window(off)] @ wl[off]
    out = np.ascontiguousarray(np.moveaxis(acc, -1, 1))
    inputs = [x, w]
    if bias is not None:
        out += bias.data.reshape((1, -1) + (1,) * nd)
        inputs.append(bias)
    lead = tuple(range(nd + 1))

    def back(g):
        gx = gw = gb = None
        gl = np.ascontiguousarray(np.moveaxis(g, 1, -1))  # (B, O..., F)
        if w.requires_grad:
            gwl = np.empty_like(wl)
            for off in offsets:
                gwl[off] = np.tensordot(xl[window(off)], gl, axes=(lead, lead))
            gw = np.moveaxis(gwl, (-1, -2), (0, 1))
        if x.requires_grad:
            gxl = np.zeros_like(xl)
            for off in offsets:
                gxl[window(off)] += gl @ wl[off].T
            if padding:
                gxl = gxl[(slice(None),) + (slice(padding, -padding),) * nd]
            gx = np.moveaxis(gxl, -1, 1)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return make_result(out, inputs, back, name)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation: x (B, C, H, W), w (F, C, kh, kw) -> (B, F, H', W').

    H' = floor((H + 2p - kh) / stride) + 1.
    """
    return _conv(x, w, bias, stride, padding, 2, "conv2d")


def conv3d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """3-D analogue of :func:`conv2d` on (B, C, D, H, W) volumes."""
    return _conv(x, w, bias, stride, padding, 3, "conv3d")


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling.

    Gradient goes to the window maximum; ties resolve to the first element
    in row-major window order.
    """
    if k != stride:
        raise ConfigurationError("maxpool2d supports only non-overlapping windows (k == stride)")
    B, C, H, W = x.shape
    if H % stride or W % stride:
        raise ConfigurationError(f"maxpool2d extents {(H, W)} not divisible by stride {stride}")
    h, w = H // k, W // k
    blocks = x.data.reshape(B, C, h, k, w, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h, w, k * k)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        routed = np.zeros_like(blocks)
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        return (routed.reshape(B, C, h, w, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W),)

    return make_result(out, (x,), back, "maxpool2d")


# -- pixel/voxel shuffles ---------------------------------------------------

def _d2s(a: np.ndarray, k: int, nd: int) -> np.ndarray:
    B, Ck = a.shape[:2]
    spatial = a.shape[2:]
    if Ck % (k ** nd):
        raise ConfigurationError(f"channel count {Ck} not divisible by {k}^{nd}")
    C = Ck // k ** nd
    a = a.reshape((B, C) + (k,) * nd + spatial)
    # (B, C, k1..knd, S1..Snd) -> (B, C, S1, k1, S2, k2, ...)
    order = (0, 1) + tuple(itertools.chain.from_iterable((2 + nd + i, 2 + i) for i in range(nd)))
    return a.transpose(order).reshape((B, C) + tuple(s * k for s in spatial))


def _s2d(a: np.ndarray, k: int, nd: int) -> np.ndarray:
    B, C = a.shape[:2]
    spatial = a.shape[2:]
    if any(s % k for s in spatial):
        raise ConfigurationError(f"spatial extents {spatial} not divisible by {k}")
    small = tuple(s // k for s in spatial)
    a = a.reshape((B, C) + tuple(itertools.chain.from_iterable((s, k) for s in small)))
    order = (0, 1) + tuple(3 + 2 * i for i in range(nd)) + tuple(2 + 2 * i for i in range(nd))
    return a.transpose(order).reshape((B, C * k ** nd) + small)


def depth_to_space(x: Tensor, k: int) -> Tensor:
    """(B, C·k², H, W) -> (B, C, kH, kW); channel c·k² + i·k + j lands at (i, j)."""
    return make_result(_d2s(x.data, k, 2), (x,), lambda g: (_s2d(g, k, 2),), "depth_to_space")


def space_to_depth(x: Tensor, k: int) -> Tensor:
    return make_result(_s2d(x.data, k, 2), (x,), lambda g: (_d2s(g, k, 2),), "space_to_depth")


def depth_to_space3d(x: Tensor, k: int) -> Tensor:
    """Voxel shuffle: (B, C·k³, D, H, W) -> (B, C, kD, kH, kW)."""
    return make_result(_d2s(x.data, k, 3), (x,), lambda g: (_s2d(g, k, 3),), "depth_to_space3d")


def space_to_depth3d(x: Tensor, k: int) -> Tensor:
    return make_result(_s2d(x.data, k, 3), (x,), lambda g: (_d2s(g, k, 3),), "space_to_depth3d")


# -- activations -----------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, alpha * x.data)
    return make_result(out, (x,), lambda g: (np.where(pos, g, alpha * g),), "leaky_relu")


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), back, "softmax")


def activation(x: Tensor, kind: str) -> Tensor:
    """Dispatch by name: sigmoid, tanh, leaky_relu, softmax (over axis 1)."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "softmax":
        return softmax(x, axis=1)
    raise ValueError(f"unknown activation {kind!r}")
