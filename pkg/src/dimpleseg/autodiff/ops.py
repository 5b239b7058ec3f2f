"""Differentiable operators over NCHW tensors.

Each op computes its forward result with numpy and registers a backward
closure on the tape. Convolution is cross-correlation with zero padding.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np

from ..errors import DegenerateBatchError, DimensionError, GeometryError
from .tensor import Tensor

CONV_KERNELS = (1, 3, 5, 7)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_nchw(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise DimensionError(op, "expected a 4-D NCHW tensor", [x.shape])


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two equally shaped tensors (residual addition)."""
    if a.shape != b.shape:
        raise DimensionError("add", "operands must have equal shapes", [a.shape, b.shape])
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def add_b(a, b) -> Tensor:
    """Broadcasting sum; scalars are lifted to constants."""
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError("add", "shapes are not broadcastable", [a.shape, b.shape]) from None
    sa, sb = a.shape, b.shape
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    try:
        out = a.data - b.data
    except ValueError:
        raise DimensionError("sub", "shapes are not broadcastable", [a.shape, b.shape]) from None
    sa, sb = a.shape, b.shape
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError("mul", "shapes are not broadcastable", [a.shape, b.shape]) from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def mul_broadcast(x: Tensor, s: Tensor) -> Tensor:
    """Rescale ``x`` [N,C,H,W] by a gate of shape [N,C,1,1] or [N,1,H,W]."""
    _check_nchw("mul_broadcast", x)
    if s.ndim != 4 or any(ss not in (1, xs) for ss, xs in zip(s.shape, x.shape)):
        raise DimensionError("mul_broadcast", "scale is not broadcastable onto input", [x.shape, s.shape])
    return mul(x, s)


def div(a, b) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is passed only where the input was inside [lo, hi]."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return Tensor._from_op(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    out = np.asarray(x.data.sum(dtype=x.dtype), dtype=x.dtype)
    return Tensor._from_op(out, (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    out = np.asarray(x.data.mean(dtype=x.dtype), dtype=x.dtype)
    return Tensor._from_op(out, (x,), lambda g: (np.broadcast_to(g / n, shape),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with a single learnable slope shared by every element."""
    if slope.size != 1:
        raise DimensionError("prelu", "slope must hold exactly one value", [slope.shape])
    xd = x.data
    a = slope.data.reshape(())
    pos = xd > 0
    out = np.where(pos, xd, a * xd)

    def backward(g):
        gx = np.where(pos, g, a * g) if x.requires_grad else None
        ga = None
        if slope.requires_grad:
            ga = np.asarray(np.sum(np.where(pos, 0, g * xd)), dtype=slope.dtype).reshape(slope.shape)
        return gx, ga

    return Tensor._from_op(out, (x, slope), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_geometry(x_shape, w_shape, stride, padding):
    N, C, H, W = x_shape
    O, Cw, kh, kw = w_shape
    if C != Cw:
        raise DimensionError("conv2d", "input channels do not match weight channels", [x_shape, w_shape])
    if kh != kw or kh not in CONV_KERNELS:
        raise DimensionError("conv2d", f"kernel must be square with size in {CONV_KERNELS}", [w_shape])
    if stride < 1 or padding < 0:
        raise GeometryError(f"conv2d: invalid stride={stride} / padding={padding}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if H + 2 * padding - kh < 0 or Ho <= 0 or Wo <= 0:
        raise GeometryError(f"conv2d: output extent {Ho}x{Wo} is not positive for input {H}x{W}")
    return N, C, H, W, O, kh, Ho, Wo


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col; ``bias`` may be omitted."""
    _check_nchw("conv2d", x)
    if weight.ndim != 4:
        raise DimensionError("conv2d", "weight must be 4-D [O,C,kh,kw]", [weight.shape])
    N, C, H, W, O, k, Ho, Wo = _conv_geometry(x.shape, weight.shape, stride, padding)
    if bias is not None and bias.shape != (O,):
        raise DimensionError("conv2d", "bias must have shape [O]", [bias.shape, weight.shape])
    s, p = stride, padding
    xd = x.data
    w2 = weight.data.reshape(O, C * k * k)

    if k == 1 and s == 1 and p == 0:
        cols = xd.reshape(N, C, H * W)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
        cols = np.empty((N, C, k, k, Ho, Wo), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
        cols = cols.reshape(N, C * k * k, Ho * Wo)

    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(N, O, Ho, Wo)

    def backward(g):
        g2 = g.reshape(N, O, Ho * Wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            if k == 1 and s == 1 and p == 0:
                gx = dcols.reshape(N, C, H, W)
            else:
                dcols = dcols.reshape(N, C, k, k, Ho, Wo)
                gxp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=xd.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, :, i, j]
                gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


def conv_transpose2x2(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Stride-2, kernel-2 transposed convolution; weight is [Cin, Cout, 2, 2]."""
    _check_nchw("conv_transpose2x2", x)
    N, C, H, W = x.shape
    if weight.ndim != 4 or weight.shape[0] != C or weight.shape[2:] != (2, 2):
        raise DimensionError("conv_transpose2x2", "weight must be [Cin, Cout, 2, 2]", [x.shape, weight.shape])
    O = weight.shape[1]
    xd, wd = x.data, weight.data
    # out[n, o, 2i+a, 2j+b] = sum_c x[n, c, i, j] * w[c, o, a, b]
    t = np.einsum("ncij,coab->noiajb", xd, wd)
    out = t.reshape(N, O, 2 * H, 2 * W)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g6 = g.reshape(N, O, H, 2, W, 2)
        gx = np.einsum("noiajb,coab->ncij", g6, wd) if x.requires_grad else None
        gw = np.einsum("noiajb,ncij->coab", g6, xd) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError("linear", "inner dimensions do not match", [x.shape, weight.shape])
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError("linear", "bias must have shape [Cout]", [bias.shape, weight.shape])
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics (biased variance) normalize the
    input and are blended into the running buffers in place.
    """
    _check_nchw("batchnorm2d", x)
    N, C, H, W = x.shape
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (C,):
            raise DimensionError("batchnorm2d", f"{name} must have shape [C]", [x.shape, t.shape])
    if eps <= 0:
        raise ValueError("batchnorm2d: eps must be positive")
    xd = x.data
    m = N * H * W
    if training:
        if m < 2:
            raise DegenerateBatchError("batchnorm2d: training mode needs N*H*W >= 2 per channel")
        mu = xd.mean(axis=(0, 2, 3))
        centered = xd - mu[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        running_mean.data *= 1.0 - momentum
        running_mean.data += momentum * mu
        running_var.data *= 1.0 - momentum
        running_var.data += momentum * var
    else:
        mu = running_mean.data
        var = running_var.data
        centered = xd - mu[None, :, None, None]
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype, copy=False)
    xhat = centered * inv_std[None, :, None, None]
    gd = gamma.data
    out = xhat * gd[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd[None, :, None, None]
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                gx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# pooling and reductions
# ---------------------------------------------------------------------------

def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties send gradient to the lowest linear index."""
    _check_nchw("maxpool2d", x)
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise GeometryError(f"maxpool2d: spatial size {H}x{W} must be even")
    win = x.data.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((N, C, H // 2, W // 2, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        return (gx,)

    return Tensor._from_op(out, (x,), backward)


def _reduce(x: Tensor, kind: str, flat: np.ndarray, out_shape, restore) -> Tensor:
    if kind == "avg":
        n = flat.shape[-1]
        out = flat.mean(axis=-1).reshape(out_shape)
        return Tensor._from_op(out, (x,), lambda g: (restore(np.repeat(g.reshape(-1, 1) / n, n, axis=1)),))
    if kind == "max":
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[:, None], axis=-1).reshape(out_shape)

        def backward(g):
            gf = np.zeros_like(flat)
            np.put_along_axis(gf, idx[:, None], g.reshape(-1, 1), axis=-1)
            return (restore(gf),)

        return Tensor._from_op(out, (x,), backward)
    raise ValueError(f"unknown reduction kind {kind!r}; expected 'avg' or 'max'")


def global_pool(x: Tensor, kind: str = "avg") -> Tensor:
    """Per-channel mean or max over H and W; output is [N,C,1,1]."""
    _check_nchw("global_pool", x)
    N, C, H, W = x.shape
    flat = x.data.reshape(N * C, H * W)
    return _reduce(x, kind, flat, (N, C, 1, 1), lambda gf: gf.reshape(N, C, H, W))


def channel_reduce(x: Tensor, kind: str = "avg") -> Tensor:
    """Per-pixel mean or max across channels; output is [N,1,H,W]."""
    _check_nchw("channel_reduce", x)
    N, C, H, W = x.shape
    flat = x.data.transpose(0, 2, 3, 1).reshape(N * H * W, C)
    return _reduce(
        x, kind, flat, (N, 1, H, W),
        lambda gf: np.ascontiguousarray(gf.reshape(N, H, W, C).transpose(0, 3, 1, 2)),
    )


# ---------------------------------------------------------------------------
# resampling and wiring
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _upsample_matrix(n: int, dtype_name: str) -> np.ndarray:
    """Linear 2x interpolation matrix [2n, n] with half-pixel centers and edge clamping."""
    m = np.zeros((2 * n, n), dtype=np.float64)
    for i in range(2 * n):
        src = (i + 0.5) / 2.0 - 0.5
        src = min(max(src, 0.0), n - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    m = m.astype(dtype_name)
    m.setflags(write=False)
    return m


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Parameter-free 2x bilinear upsampling (align_corners=False convention)."""
    _check_nchw("bilinear_upsample2x", x)
    N, C, H, W = x.shape
    if H < 1 or W < 1:
        raise GeometryError("bilinear_upsample2x: empty spatial extent")
    uh = _upsample_matrix(H, x.dtype.name)
    uw = _upsample_matrix(W, x.dtype.name)
    out = np.matmul(uh, np.matmul(x.data, uw.T))

    def backward(g):
        return (np.matmul(uh.T, np.matmul(g, uw)),)

    return Tensor._from_op(out, (x,), backward)


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along the channel axis, in argument order."""
    if not tensors:
        raise DimensionError("concat_channels", "nothing to concatenate")
    for t in tensors:
        _check_nchw("concat_channels", t)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise DimensionError("concat_channels", "N, H, W must match", [t.shape for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return Tensor._from_op(out, tensors, backward)


def flatten_channels(x: Tensor) -> Tensor:
    """[N,C,1,1] -> [N,C]."""
    N, C = x.shape[:2]
    return reshape(x, (N, C))


def unflatten_channels(x: Tensor) -> Tensor:
    """[N,C] -> [N,C,1,1]."""
    N, C = x.shape
    return reshape(x, (N, C, 1, 1))


__all__ = [
    "add", "add_b", "sub", "mul", "mul_broadcast", "div", "log", "clip", "sum", "mean", "reshape",
    "sigmoid", "prelu", "conv2d", "conv_transpose2x2", "linear", "batchnorm2d", "maxpool2d",
    "global_pool", "channel_reduce", "bilinear_upsample2x", "concat_channels",
    "flatten_channels", "unflatten_channels",
]
