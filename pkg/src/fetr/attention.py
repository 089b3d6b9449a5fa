"""Feature-enhancement modules: style recalibration, SE gating, criss-cross attention.

All three take and return ``B x C x H x W`` tensors. Parameters live in plain
dataclasses so they can be enumerated, counted and checkpointed uniformly.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError
from .layers import BatchNorm, he_normal, zeros_param
from .ops import depthwise_conv2d, depthwise_separable_conv, global_pool, softmax
from .tensor import Tensor, as_tensor, concat, relu, sigmoid


# operation counters --------------------------------------------------------


@dataclass
class OpCounter:
    """Tallies of attention work actually executed by the kernels below."""

    scores: int = 0
    score_macs: int = 0
    aggregate_macs: int = 0


_active_counter: contextvars.ContextVar[Optional[OpCounter]] = contextvars.ContextVar("fetr_counter", default=None)


@contextlib.contextmanager
def count_ops():
    counter = OpCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def _tally(scores=0, score_macs=0, aggregate_macs=0):
    c = _active_counter.get()
    if c is not None:
        c.scores += scores
        c.score_macs += score_macs
        c.aggregate_macs += aggregate_macs


# StyleRM -------------------------------------------------------------------


@dataclass
class StyleRMParams:
    cfc: Tensor  # C x 2, one weight per style statistic
    bn: BatchNorm
    pre_conv: Tensor  # C x 1 x 3 x 3 depthwise

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, dtype=np.float32) -> "StyleRMParams":
        return cls(
            cfc=zeros_param((channels, 2), dtype),
            bn=BatchNorm.create(channels, dtype),
            pre_conv=he_normal(rng, (channels, 1, 3, 3), 9, dtype),
        )


def style_pool(x) -> Tensor:
    """Per-channel (mean, std) style descriptor, ``B x C x 2``."""
    x = as_tensor(x)
    B, C = x.shape[:2]
    mu = global_pool(x, "mean").reshape(B, C, 1)
    sigma = global_pool(x, "std").reshape(B, C, 1)
    return concat([mu, sigma], axis=-1)


def style_integrate(t, p: StyleRMParams, training: bool) -> Tensor:
    """Channel-wise encode the style descriptor, batch-normalize, squash to (0, 1)."""
    t = as_tensor(t)
    if t.ndim != 3 or t.shape[-1] != 2:
        raise DimensionError(f"style descriptor must be B x C x 2, got {t.shape}")
    if p.cfc.shape != (t.shape[1], 2):
        raise DimensionError(f"cfc weight {p.cfc.shape} does not match {t.shape[1]} channels")
    z = (t * p.cfc).sum(axis=-1)
    return sigmoid(p.bn(z, training))


def recalibrate(x, g) -> Tensor:
    """Scale each (b, c) feature map of ``x`` by the gate ``g[b, c]``."""
    x, g = as_tensor(x), as_tensor(g)
    B, C = g.shape
    return x * g.reshape(B, C, 1, 1)


def style_rm_forward(x, p: StyleRMParams, training: bool) -> Tensor:
    x = as_tensor(x)
    enhanced = depthwise_conv2d(x, p.pre_conv, pad=1)
    g = style_integrate(style_pool(enhanced), p, training)
    return recalibrate(x, g)


# SE --------------------------------------------------------------------------


@dataclass
class SEParams:
    fc1: Tensor  # C/r x C
    fc2: Tensor  # C x C/r

    @property
    def reduction(self) -> int:
        return self.fc1.shape[1] // self.fc1.shape[0]

    @classmethod
    def create(cls, channels: int, reduction: int, rng: np.random.Generator, dtype=np.float32) -> "SEParams":
        if reduction < 1 or channels % reduction:
            raise DimensionError(f"reduction {reduction} must divide channel count {channels}")
        hidden = channels // reduction
        return cls(
            fc1=he_normal(rng, (hidden, channels), channels, dtype),
            fc2=he_normal(rng, (channels, hidden), hidden, dtype),
        )


def se_gate(x, p: SEParams) -> Tensor:
    s = global_pool(x, "mean")
    return sigmoid(relu(s @ p.fc1.T) @ p.fc2.T)


def se_forward(x, p: SEParams) -> Tensor:
    x = as_tensor(x)
    return recalibrate(x, se_gate(x, p))


# criss-cross attention -------------------------------------------------------


@dataclass
class SeparableProjection:
    depth: Tensor  # C x 1 x k x k
    point: Tensor  # O x C x 1 x 1

    @classmethod
    def create(cls, c_in, c_out, kernel, rng, dtype=np.float32) -> "SeparableProjection":
        if kernel == 1:
            depth = Tensor(np.ones((c_in, 1, 1, 1), dtype=dtype), requires_grad=True)
        else:
            depth = he_normal(rng, (c_in, 1, kernel, kernel), kernel * kernel, dtype)
        return cls(depth=depth, point=he_normal(rng, (c_out, c_in, 1, 1), c_in, dtype))

    def __call__(self, x) -> Tensor:
        return depthwise_separable_conv(x, self.depth, self.point)


@dataclass
class DCAParams:
    """One projection set shared by every criss-cross pass."""

    q_proj: SeparableProjection
    k_proj: SeparableProjection
    v_proj: SeparableProjection

    @staticmethod
    def reduced_channels(channels: int) -> int:
        return max(1, channels // 8)

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, dtype=np.float32, kernel: int = 1) -> "DCAParams":
        cq = cls.reduced_channels(channels)
        return cls(
            q_proj=SeparableProjection.create(channels, cq, kernel, rng, dtype),
            k_proj=SeparableProjection.create(channels, cq, kernel, rng, dtype),
            v_proj=SeparableProjection.create(channels, channels, kernel, rng, dtype),
        )


def _off_diagonal_index(n: int) -> np.ndarray:
    """Row ``h`` lists every index in ``range(n)`` except ``h``: shape n x (n-1)."""
    full = np.broadcast_to(np.arange(n), (n, n))
    return full[~np.eye(n, dtype=bool)].reshape(n, n - 1)


def criss_cross_affinity(q, k) -> Tensor:
    """Scores between each position and the H+W-1 positions on its row and column.

    Returns ``B x H x W x (H+W-1)``. The first ``H-1`` entries of the last
    axis are the other rows of the same column (ascending), the last ``W``
    entries are every column of the same row, so the position itself
    appears exactly once.
    """
    q, k = as_tensor(q), as_tensor(k)
    if q.shape != k.shape:
        raise DimensionError(f"query {q.shape} and key {k.shape} differ")
    B, C, H, W = q.shape
    qd, kd = q.data, k.data
    idx = _off_diagonal_index(H)
    k_col = kd[:, :, idx, :]  # B C H H-1 W
    col = np.einsum("bchw,bchjw->bhwj", qd, k_col)
    row = np.einsum("bchw,bchv->bhwv", qd, kd)
    out = np.concatenate([col, row], axis=-1)
    _tally(scores=col.size + row.size, score_macs=C * col.size + C * row.size)

    def backward(g):
        gcol, grow = g[..., : H - 1], g[..., H - 1 :]
        gq = gk = None
        if q.requires_grad:
            gq = np.einsum("bhwj,bchjw->bchw", gcol, k_col) + np.einsum("bhwv,bchv->bchw", grow, kd)
        if k.requires_grad:
            gk = np.einsum("bhwv,bchw->bchv", grow, qd)
            gk_col = np.einsum("bhwj,bchw->bchjw", gcol, qd)
            for h in range(H):
                gk[:, :, idx[h], :] += gk_col[:, :, h]
        return gq, gk

    return Tensor._from_op(out, (q, k), backward, "criss_cross_affinity")


def criss_cross_aggregate(a, v) -> Tensor:
    """Weighted sum of value vectors over each position's row and column.

    ``a`` is ``B x H x W x (H+W-1)`` laid out as in :func:`criss_cross_affinity`.
    """
    a, v = as_tensor(a), as_tensor(v)
    B, C, H, W = v.shape
    if a.shape != (B, H, W, H + W - 1):
        raise DimensionError(f"attention {a.shape} does not match values {v.shape}")
    ad, vd = a.data, v.data
    idx = _off_diagonal_index(H)
    v_col = vd[:, :, idx, :]
    a_col, a_row = ad[..., : H - 1], ad[..., H - 1 :]
    out = np.einsum("bhwj,bchjw->bchw", a_col, v_col) + np.einsum("bhwv,bchv->bchw", a_row, vd)
    _tally(aggregate_macs=C * a.size)

    def backward(g):
        ga = gv = None
        if a.requires_grad:
            ga = np.concatenate(
                [np.einsum("bchw,bchjw->bhwj", g, v_col), np.einsum("bchw,bchv->bhwv", g, vd)], axis=-1
            )
        if v.requires_grad:
            gv = np.einsum("bchw,bhwv->bchv", g, a_row)
            gv_col = np.einsum("bchw,bhwj->bchjw", g, a_col)
            for h in range(H):
                gv[:, :, idx[h], :] += gv_col[:, :, h]
        return ga, gv

    return Tensor._from_op(out, (a, v), backward, "criss_cross_aggregate")


def cca_pass(r, p: DCAParams) -> Tensor:
    """One criss-cross attention pass with residual: ``R + sum_i A_i V_i``."""
    r = as_tensor(r)
    if r.ndim != 4:
        raise DimensionError(f"expected B x C x H x W, got {r.shape}")
    q, k, v = p.q_proj(r), p.k_proj(r), p.v_proj(r)
    attn = softmax(criss_cross_affinity(q, k), axis=-1)
    return criss_cross_aggregate(attn, v) + r


def dca_forward(r, p: DCAParams, passes: int = 2) -> Tensor:
    """Recurrent criss-cross attention; every pass reuses the same parameters."""
    out = as_tensor(r)
    for _ in range(passes):
        out = cca_pass(out, p)
    return out


def criss_cross_mask(h: int, w: int) -> np.ndarray:
    """Boolean ``HW x HW`` mask: True where two positions share a row or column."""
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    return (rows[:, None] == rows[None, :]) | (cols[:, None] == cols[None, :])


def dense_attention(q, k, v, mask: Optional[np.ndarray] = None) -> Tensor:
    """Attention over all ``HW`` positions; ``mask`` (HW x HW bool) limits the key set."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    B, Cq, H, W = q.shape
    C = v.shape[1]
    n = H * W
    qt = q.reshape(B, Cq, n).transpose(0, 2, 1)
    scores = qt @ k.reshape(B, Cq, n)  # B x n x n
    _tally(scores=B * n * n, score_macs=B * n * n * Cq)
    if mask is not None:
        scores = scores + Tensor(np.where(mask, 0.0, -np.inf).astype(scores.dtype))
    attn = softmax(scores, axis=-1)
    out = v.reshape(B, C, n) @ attn.transpose(0, 2, 1)
    _tally(aggregate_macs=B * n * n * C)
    return out.reshape(B, C, H, W)


__all__ = [
    "OpCounter",
    "count_ops",
    "StyleRMParams",
    "style_pool",
    "style_integrate",
    "recalibrate",
    "style_rm_forward",
    "SEParams",
    "se_gate",
    "se_forward",
    "SeparableProjection",
    "DCAParams",
    "criss_cross_affinity",
    "criss_cross_aggregate",
    "cca_pass",
    "dca_forward",
    "criss_cross_mask",
    "dense_attention",
]
