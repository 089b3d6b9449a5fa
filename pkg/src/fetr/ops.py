"""Convolution, normalization, pooling and resampling operators."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatchError, DimensionError
from .tensor import Tensor, as_tensor, take

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
STYLE_EPS = 1e-5

BLUR_TAPS = np.array([1.0, 2.0, 1.0])


def _out_extent(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _check_4d(x, what="input"):
    if x.ndim != 4:
        raise DimensionError(f"{what} must be B x C x H x W, got shape {x.shape}")


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense 2-D cross-correlation without bias.

    ``x`` is ``B x C x H x W`` and ``w`` is ``O x C x k x k`` with odd ``k``.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_4d(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise DimensionError(f"kernel must be O x C x k x k with odd k, got {w.shape}")
    B, C, H, W = x.shape
    O, Cw, k, _ = w.shape
    if Cw != C:
        raise DimensionError(f"kernel expects {Cw} input channels, input has {C}")
    Ho, Wo = _out_extent(H, k, stride, pad), _out_extent(W, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"output extent {Ho}x{Wo} < 1 for input {H}x{W}, k={k}")
    xd, wd = x.data, w.data
    w2 = wd.reshape(O, C * k * k)

    if k == 1 and pad == 0:
        xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
        flat = np.ascontiguousarray(xs).reshape(B, C, Ho * Wo)
        out = (w2 @ flat).reshape(B, O, Ho, Wo)

        def backward(g):
            g3 = g.reshape(B, O, Ho * Wo)
            gw = np.einsum("bon,bcn->oc", g3, flat, optimize=True).reshape(wd.shape) if w.requires_grad else None
            gx = None
            if x.requires_grad:
                gflat = (w2.T @ g3).reshape(B, C, Ho, Wo)
                if stride > 1:
                    gx = np.zeros_like(xd)
                    gx[:, :, ::stride, ::stride] = gflat
                else:
                    gx = gflat
            return gx, gw

        return Tensor._from_op(out, (x, w), backward, "conv2d")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : stride * Ho : stride, : stride * Wo : stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * k * k)
    out = (cols @ w2.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, O)
        gw = (g2.T @ cols).reshape(wd.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[..., i, j]
            gx = gxp[:, :, pad : pad + H, pad : pad + W] if pad else gxp
        return gx, gw

    return Tensor._from_op(np.ascontiguousarray(out), (x, w), backward, "conv2d")


def depthwise_conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Per-channel cross-correlation; ``w`` is ``C x 1 x k x k``."""
    x, w = as_tensor(x), as_tensor(w)
    _check_4d(x)
    B, C, H, W = x.shape
    if w.ndim != 4 or w.shape[1] != 1 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"depthwise kernel must be C x 1 x k x k, got {w.shape}")
    if w.shape[0] != C:
        raise DimensionError(f"depthwise kernel has {w.shape[0]} channels, input has {C}")
    k = w.shape[2]
    Ho, Wo = _out_extent(H, k, stride, pad), _out_extent(W, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"output extent {Ho}x{Wo} < 1 for input {H}x{W}, k={k}")
    xd = x.data
    wk = w.data.reshape(C, k, k)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd

    def tap(i, j):
        return xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]

    out = np.zeros((B, C, Ho, Wo), dtype=np.result_type(xd, wk))
    for i in range(k):
        for j in range(k):
            out += tap(i, j) * wk[:, i, j][None, :, None, None]

    def backward(g):
        gw = gx = None
        if w.requires_grad:
            gw = np.empty((C, k, k), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gw[:, i, j] = np.einsum("bchw,bchw->c", g, tap(i, j))
            gw = gw.reshape(w.shape)
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += g * wk[:, i, j][None, :, None, None]
            gx = gxp[:, :, pad : pad + H, pad : pad + W] if pad else gxp
        return gx, gw

    return Tensor._from_op(out, (x, w), backward, "depthwise_conv2d")


def depthwise_separable_conv(x, w_depth, w_point, stride: int = 1, pad=None) -> Tensor:
    """Depthwise ``k x k`` filtering followed by 1x1 pointwise channel mixing.

    Padding defaults to ``(k - 1) // 2`` so stride 1 preserves the spatial size.
    """
    x, w_depth, w_point = as_tensor(x), as_tensor(w_depth), as_tensor(w_point)
    if w_point.ndim != 4 or w_point.shape[2:] != (1, 1):
        raise DimensionError(f"pointwise kernel must be O x C x 1 x 1, got {w_point.shape}")
    if w_point.shape[1] != w_depth.shape[0]:
        raise DimensionError(
            f"pointwise kernel expects {w_point.shape[1]} channels, depthwise stage has {w_depth.shape[0]}"
        )
    if pad is None:
        pad = (w_depth.shape[-1] - 1) // 2
    return conv2d(depthwise_conv2d(x, w_depth, stride, pad), w_point)


def _as_buffer(buf):
    return buf.data if isinstance(buf, Tensor) else buf


def batch_norm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization for ``B x C`` or ``B x C x H x W`` input.

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place; in eval mode the running buffers are used and
    nothing is mutated.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm expects rank 2 or 4 input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"affine parameters must have shape ({C},)")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    n = x.size // C
    rm, rv = _as_buffer(running_mean), _as_buffer(running_var)
    xd = x.data

    if training:
        if n < 2:
            raise DegenerateBatchError(f"batch_norm in train mode needs >= 2 values per channel, got {n}")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        rm *= 1.0 - momentum
        rm += momentum * mu
        rv *= 1.0 - momentum
        rv += momentum * var * (n / (n - 1))
    else:
        mu, var = rm.astype(xd.dtype), rv.astype(xd.dtype)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if training:
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (dxhat - s1 / n - xhat * s2 / n) * inv_std.reshape(bshape)
            else:
                gx = dxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batch_norm")


def global_pool(x, kind: str = "mean", eps: float = STYLE_EPS) -> Tensor:
    """Spatial mean or standard deviation per (batch, channel): ``B x C``.

    The deviation uses the population variance and ``sqrt(var + eps)`` so the
    gradient stays finite for flat channels.
    """
    x = as_tensor(x)
    _check_4d(x)
    B, C, H, W = x.shape
    hw = H * W
    if kind == "mean":
        return x.mean(axis=(2, 3))
    if kind != "std":
        raise ValueError(f"unknown pool kind {kind!r}")
    xd = x.data
    centered = xd - xd.mean(axis=(2, 3), keepdims=True)
    out = np.sqrt((centered * centered).mean(axis=(2, 3)) + eps)

    def backward(g):
        return ((g / (hw * out))[:, :, None, None] * centered,)

    return Tensor._from_op(out, (x,), backward, "std_pool")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


def blur_kernel(channels: int, dtype=np.float64) -> np.ndarray:
    k2 = np.outer(BLUR_TAPS, BLUR_TAPS) / 16.0
    return np.broadcast_to(k2, (channels, 1, 3, 3)).astype(dtype)


def _reflect_index(n: int) -> np.ndarray:
    return np.pad(np.arange(n), 1, mode="reflect")


def blur_pool(x, stride: int = 2) -> Tensor:
    """Binomial 3x3 low-pass with reflect padding, then subsample by ``stride``."""
    x = as_tensor(x)
    _check_4d(x)
    B, C, H, W = x.shape
    if H < 2 or W < 2:
        raise DimensionError(f"blur_pool needs H, W >= 2, got {H}x{W}")
    padded = take(take(x, _reflect_index(H), axis=2), _reflect_index(W), axis=3)
    return depthwise_conv2d(padded, Tensor(blur_kernel(C, x.dtype)), stride=stride)


def space_to_depth(x, block: int = 4) -> Tensor:
    """Fold each ``block x block`` patch into channels: B x C*block^2 x H/b x W/b."""
    x = as_tensor(x)
    _check_4d(x)
    B, C, H, W = x.shape
    if H % block or W % block:
        raise DimensionError(f"spatial extent {H}x{W} not divisible by block {block}")
    out = _s2d(x.data, block)
    return Tensor._from_op(out, (x,), lambda g: (_d2s(g, block),), "space_to_depth")


def depth_to_space(x, block: int = 4) -> Tensor:
    x = as_tensor(x)
    _check_4d(x)
    if x.shape[1] % (block * block):
        raise DimensionError(f"channel count {x.shape[1]} not divisible by {block * block}")
    out = _d2s(x.data, block)
    return Tensor._from_op(out, (x,), lambda g: (_s2d(g, block),), "depth_to_space")


def _s2d(a: np.ndarray, b: int) -> np.ndarray:
    B, C, H, W = a.shape
    t = a.reshape(B, C, H // b, b, W // b, b).transpose(0, 3, 5, 1, 2, 4)
    return np.ascontiguousarray(t).reshape(B, b * b * C, H // b, W // b)


def _d2s(a: np.ndarray, b: int) -> np.ndarray:
    B, CC, Hb, Wb = a.shape
    C = CC // (b * b)
    t = a.reshape(B, b, b, C, Hb, Wb).transpose(0, 3, 4, 1, 5, 2)
    return np.ascontiguousarray(t).reshape(B, C, Hb * b, Wb * b)
