"""Cross-snippet propagation blocks inserted inside the backbone.

Three kinds of information exchange across snippet boundaries operate on
the concatenated clip-level token grid (T', H', W', C):

* local: a 3D-conv bottleneck whose temporal kernel leaks across snippet
  boundaries one step per block;
* global 1D: temporal self-attention run independently at every spatial
  location (spatial dims folded into the batch);
* global 3D: joint attention over all spatiotemporal tokens (reference
  variant, identical math on the flattened sequence).

All blocks are residual and zero-initialized at their final layer, so a
freshly created block is a bitwise identity map.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from . import tensor as tt
from .tensor import Parameter, Tensor

LOCAL_BOTTLENECK_RATIO = 4


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent RNG stream for one named parameter.

    Derived from (seed, crc32(name)), so adding or removing other
    parameters never shifts this one's draws.
    """
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def _param(seed: int, name: str, shape, scheme: str) -> Parameter:
    return tt.make_parameter(name, shape, scheme, named_rng(seed, name))


# ---------------------------------------------------------------------------
# Local propagation block
# ---------------------------------------------------------------------------


@dataclass
class LocalBlockWeights:
    """3D-conv bottleneck: reduce (1x1x1), spatial (3x3x3), expand (1x1x1).

    ``norm_scale`` is zero at initialization, which makes the residual
    branch exactly zero (the block starts as an identity map).
    """

    conv_reduce: Parameter
    reduce_bias: Parameter
    conv_spatial: Parameter
    spatial_bias: Parameter
    conv_expand: Parameter
    expand_bias: Parameter
    norm_scale: Parameter
    norm_shift: Parameter

    @classmethod
    def create(cls, prefix: str, c: int, seed: int) -> "LocalBlockWeights":
        r = max(1, c // LOCAL_BOTTLENECK_RATIO)
        return cls(
            conv_reduce=_param(seed, f"{prefix}.conv_reduce.weight", (1, 1, 1, c, r), "truncated_normal"),
            reduce_bias=_param(seed, f"{prefix}.conv_reduce.bias", (r,), "zeros"),
            conv_spatial=_param(seed, f"{prefix}.conv_spatial.weight", (3, 3, 3, r, r), "truncated_normal"),
            spatial_bias=_param(seed, f"{prefix}.conv_spatial.bias", (r,), "zeros"),
            conv_expand=_param(seed, f"{prefix}.conv_expand.weight", (1, 1, 1, r, c), "truncated_normal"),
            expand_bias=_param(seed, f"{prefix}.conv_expand.bias", (c,), "zeros"),
            norm_scale=_param(seed, f"{prefix}.norm.scale", (c,), "zeros"),
            norm_shift=_param(seed, f"{prefix}.norm.shift", (c,), "zeros"),
        )

    def params(self) -> dict[str, Parameter]:
        return {p.name: p for p in vars(self).values()}


def local_propagation(x: Tensor, w: LocalBlockWeights) -> Tensor:
    """Residual 3D-conv bottleneck over the full clip-level grid.

    The 3-wide temporal kernel of the middle conv crosses snippet
    boundaries, so stacking blocks grows the cross-snippet receptive
    field one token step per block and side.
    """
    if x.ndim != 4:
        raise ConfigurationError(f"expected T' x H' x W' x C tokens, got {x.shape}")
    if x.shape[-1] != w.conv_reduce.shape[3]:
        raise ConfigurationError(
            f"input channels {x.shape[-1]} do not match block channels "
            f"{w.conv_reduce.shape[3]}"
        )
    h = tt.conv3d(x, w.conv_reduce.tensor) + w.reduce_bias.tensor
    h = tt.gelu(h)
    h = tt.conv3d(h, w.conv_spatial.tensor, padding=tt.same_padding((3, 3, 3)))
    h = h + w.spatial_bias.tensor
    h = tt.gelu(h)
    h = tt.conv3d(h, w.conv_expand.tensor) + w.expand_bias.tensor
    h = h * w.norm_scale.tensor + w.norm_shift.tensor
    return x + h


# ---------------------------------------------------------------------------
# Global propagation blocks
# ---------------------------------------------------------------------------


@dataclass
class GlobalBlockWeights:
    """Multi-head temporal attention weights; out projection zero-initialized."""

    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    out_weight: Parameter
    out_bias: Parameter
    heads: int

    @classmethod
    def create(cls, prefix: str, c: int, m: int, seed: int) -> "GlobalBlockWeights":
        if c % m != 0:
            raise ConfigurationError(f"C={c} not divisible by m={m} heads")
        return cls(
            w_q=_param(seed, f"{prefix}.w_q", (c, c), "truncated_normal"),
            w_k=_param(seed, f"{prefix}.w_k", (c, c), "truncated_normal"),
            w_v=_param(seed, f"{prefix}.w_v", (c, c), "truncated_normal"),
            out_weight=_param(seed, f"{prefix}.out.weight", (c, c), "zeros"),
            out_bias=_param(seed, f"{prefix}.out.bias", (c,), "zeros"),
            heads=m,
        )

    def params(self) -> dict[str, Parameter]:
        return {
            p.name: p
            for p in (self.w_q, self.w_k, self.w_v, self.out_weight, self.out_bias)
        }


def multi_head_attention(
    x: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor, heads: int
) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    ``x`` is (..., S, C); heads split C, scores use 1/sqrt(C/heads)
    (the per-head query dim), and the result is (..., S, C) with heads
    re-concatenated.  No positional terms and no projection bias.
    """
    *batch, s, c = x.shape
    hd = c // heads
    q = tt.matmul(x, w_q)
    k = tt.matmul(x, w_k)
    v = tt.matmul(x, w_v)

    def split(t):
        t = tt.reshape(t, (*batch, s, heads, hd))
        axes = list(range(len(batch))) + [len(batch) + 1, len(batch), len(batch) + 2]
        return tt.transpose(t, axes)  # (..., heads, S, hd)

    q, k, v = split(q), split(k), split(v)
    scores = tt.matmul(q, tt.transpose(k, _swap_last(k.ndim)))
    scores = scores * Tensor(1.0 / math.sqrt(hd))
    tt.record_attn_matrix(scores.size)
    attn = tt.softmax(scores, axis=-1)
    y = tt.matmul(attn, v)  # (..., heads, S, hd)
    axes = list(range(len(batch))) + [len(batch) + 1, len(batch), len(batch) + 2]
    y = tt.transpose(y, axes)
    return tt.reshape(y, (*batch, s, c))


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def global_propagation_1d(x: Tensor, w: GlobalBlockWeights) -> Tensor:
    """Temporal attention at each spatial location independently.

    Spatial positions are folded into the batch dimension, so tokens at
    different (h, w) never interact; each location sees the full T'
    sequence.
    """
    t, hh, ww, c = x.shape
    seq = tt.reshape(x, (t, hh * ww, c))
    seq = tt.transpose(seq, (1, 0, 2))  # (HW, T', C)
    y = multi_head_attention(seq, w.w_q.tensor, w.w_k.tensor, w.w_v.tensor, w.heads)
    y = tt.matmul(y, w.out_weight.tensor) + w.out_bias.tensor
    y = tt.transpose(y, (1, 0, 2))
    return x + tt.reshape(y, (t, hh, ww, c))


def global_propagation_3d(x: Tensor, w: GlobalBlockWeights) -> Tensor:
    """Joint attention over all T' * H' * W' tokens of the clip."""
    t, hh, ww, c = x.shape
    seq = tt.reshape(x, (t * hh * ww, c))
    y = multi_head_attention(seq, w.w_q.tensor, w.w_k.tensor, w.w_v.tensor, w.heads)
    y = tt.matmul(y, w.out_weight.tensor) + w.out_bias.tensor
    return x + tt.reshape(y, (t, hh, ww, c))


# ---------------------------------------------------------------------------
# Factorization probe
# ---------------------------------------------------------------------------


def _attention_oracle_single(x: np.ndarray, w: GlobalBlockWeights) -> np.ndarray:
    """Plain-numpy attention for ONE temporal sequence (T', C)."""
    t, c = x.shape
    m = w.heads
    hd = c // m
    q = (x @ w.w_q.data).reshape(t, m, hd)
    k = (x @ w.w_k.data).reshape(t, m, hd)
    v = (x @ w.w_v.data).reshape(t, m, hd)
    out = np.empty_like(x)
    for h in range(m):
        s = q[:, h, :] @ k[:, h, :].T / math.sqrt(hd)
        s = s - s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        a = e / e.sum(axis=-1, keepdims=True)
        out[:, h * hd : (h + 1) * hd] = a @ v[:, h, :]
    return x + out @ w.out_weight.data + w.out_bias.data


def attention_equivalence_probe(x: Tensor, w: GlobalBlockWeights) -> float:
    """Max abs deviation of the batched 1D block from a per-location loop.

    Validates that folding spatial positions into the batch dimension is
    exactly equivalent (up to accumulation order, <= 1e-12) to running
    one independent temporal attention per spatial location.
    """
    batched = global_propagation_1d(x, w).data
    t, hh, ww, c = x.shape
    worst = 0.0
    for i in range(hh):
        for j in range(ww):
            ref = _attention_oracle_single(np.ascontiguousarray(x.data[:, i, j, :]), w)
            worst = max(worst, float(np.abs(batched[:, i, j, :] - ref).max()))
    return worst
