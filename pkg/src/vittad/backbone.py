"""Snippet-partitioned plain-ViT video backbone.

A clip is split into non-overlapping snippets, each tokenized by a
tubelet projection and processed by dense intra-snippet transformer
blocks; cross-snippet propagation modules run on the concatenated
clip-level grid at chosen insertion points.  Temporal order across
snippets is injected by a learnable clip-level positional encoding on
top of the snippet-level one shared by all snippets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .data import VideoClip
from .errors import ConfigurationError
from . import tensor as tt
from .propagation import (
    GlobalBlockWeights,
    LocalBlockWeights,
    global_propagation_1d,
    global_propagation_3d,
    local_propagation,
    multi_head_attention,
    named_rng,
)
from .tensor import Parameter, Tensor

MLP_RATIO = 4


@dataclass
class FeatureMap:
    """Token grid produced by the backbone."""

    tokens: Tensor  # (T', H', W', C)
    temporal_stride: int  # frames per token step
    clip_origin_s: float = 0.0


@dataclass
class PositionalEncodings:
    """Shared snippet-level PE plus a learnable clip-level temporal PE.

    ``clip_pe`` has one row per clip-level temporal token and starts at
    zero so the freshly built model matches the snippet-only baseline.
    """

    snippet_pe: Parameter  # (Ls', h', w', C)
    clip_pe: Parameter  # (T', C)

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "PositionalEncodings":
        shape = (
            config.snippet_tokens,
            config.h_tokens,
            config.w_tokens,
            config.C,
        )
        return cls(
            snippet_pe=tt.make_parameter(
                "pe.snippet", shape, "truncated_normal", named_rng(seed, "pe.snippet")
            ),
            clip_pe=tt.make_parameter(
                "pe.clip",
                (config.t_tokens, config.C),
                "zeros",
                named_rng(seed, "pe.clip"),
            ),
        )

    def params(self) -> dict[str, Parameter]:
        return {self.snippet_pe.name: self.snippet_pe, self.clip_pe.name: self.clip_pe}


@dataclass
class BlockWeights:
    """One pre-norm transformer block (MHSA + MLP, residuals)."""

    norm1_gamma: Parameter
    norm1_beta: Parameter
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    out_weight: Parameter
    out_bias: Parameter
    norm2_gamma: Parameter
    norm2_beta: Parameter
    fc1_weight: Parameter
    fc1_bias: Parameter
    fc2_weight: Parameter
    fc2_bias: Parameter
    heads: int

    @classmethod
    def create(
        cls, prefix: str, c: int, m: int, seed: int, zero_residual: bool = False
    ) -> "BlockWeights":
        """Build block weights; ``zero_residual`` zero-initializes the final
        projection of both branches so the block starts as an identity."""
        res = "zeros" if zero_residual else "truncated_normal"

        def p(name, shape, scheme):
            return tt.make_parameter(
                f"{prefix}.{name}", shape, scheme, named_rng(seed, f"{prefix}.{name}")
            )

        return cls(
            norm1_gamma=p("norm1.gamma", (c,), "identity_scaled"),
            norm1_beta=p("norm1.beta", (c,), "zeros"),
            w_q=p("attn.w_q", (c, c), "truncated_normal"),
            w_k=p("attn.w_k", (c, c), "truncated_normal"),
            w_v=p("attn.w_v", (c, c), "truncated_normal"),
            out_weight=p("attn.out.weight", (c, c), res),
            out_bias=p("attn.out.bias", (c,), "zeros"),
            norm2_gamma=p("norm2.gamma", (c,), "identity_scaled"),
            norm2_beta=p("norm2.beta", (c,), "zeros"),
            fc1_weight=p("mlp.fc1.weight", (c, MLP_RATIO * c), "truncated_normal"),
            fc1_bias=p("mlp.fc1.bias", (MLP_RATIO * c,), "zeros"),
            fc2_weight=p("mlp.fc2.weight", (MLP_RATIO * c, c), res),
            fc2_bias=p("mlp.fc2.bias", (c,), "zeros"),
            heads=m,
        )

    def params(self) -> dict[str, Parameter]:
        return {
            p.name: p for p in vars(self).values() if isinstance(p, Parameter)
        }


def encoder_block(x: Tensor, w: BlockWeights) -> Tensor:
    """Pre-norm transformer block on (..., S, C) token sequences."""
    h = tt.layer_norm(x, w.norm1_gamma.tensor, w.norm1_beta.tensor)
    h = multi_head_attention(h, w.w_q.tensor, w.w_k.tensor, w.w_v.tensor, w.heads)
    h = tt.matmul(h, w.out_weight.tensor) + w.out_bias.tensor
    x = x + h
    h = tt.layer_norm(x, w.norm2_gamma.tensor, w.norm2_beta.tensor)
    h = tt.matmul(h, w.fc1_weight.tensor) + w.fc1_bias.tensor
    h = tt.gelu(h)
    h = tt.matmul(h, w.fc2_weight.tensor) + w.fc2_bias.tensor
    return x + h


@dataclass
class BackboneWeights:
    """All backbone parameters: tokenizer, PEs, blocks, propagation."""

    embed_weight: Parameter
    embed_bias: Parameter
    pe: PositionalEncodings
    blocks: list[BlockWeights]
    props: list  # LocalBlockWeights | GlobalBlockWeights, aligned with prop_indices
    prop_indices: list[int] = field(default_factory=list)

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "BackboneWeights":
        kt, kh, kw = config.tubelet
        in_dim = kt * kh * kw * 3
        embed_weight = tt.make_parameter(
            "embed.proj.weight",
            (in_dim, config.C),
            "truncated_normal",
            named_rng(seed, "embed.proj.weight"),
        )
        embed_bias = tt.make_parameter(
            "embed.proj.bias", (config.C,), "zeros", named_rng(seed, "embed.proj.bias")
        )
        blocks = [
            BlockWeights.create(f"backbone.block{i}", config.C, config.m, seed)
            for i in range(config.n_blocks)
        ]
        if config.prop_kind == "none":
            indices: list[int] = []
            props: list = []
        else:
            indices = place_blocks(config.n_blocks, config.k_prop, config.placement)
            if config.prop_kind == "local":
                props = [
                    LocalBlockWeights.create(f"prop{i}", config.C, seed)
                    for i in indices
                ]
            else:
                props = [
                    GlobalBlockWeights.create(f"prop{i}", config.C, config.m, seed)
                    for i in indices
                ]
        return cls(
            embed_weight=embed_weight,
            embed_bias=embed_bias,
            pe=PositionalEncodings.create(config, seed),
            blocks=blocks,
            props=props,
            prop_indices=indices,
        )

    def params(self) -> dict[str, Parameter]:
        out = {self.embed_weight.name: self.embed_weight,
               self.embed_bias.name: self.embed_bias}
        out.update(self.pe.params())
        for block in self.blocks:
            out.update(block.params())
        for prop in self.props:
            out.update(prop.params())
        return out


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def partition_snippets(clip: VideoClip, ns: int) -> list[Tensor]:
    """Split a clip into ``ns`` equal non-overlapping snippets, in order.

    Concatenating the outputs reconstructs the clip exactly.
    """
    t = clip.num_frames
    if ns < 1 or t % ns != 0:
        raise ConfigurationError(
            f"clip of T={t} frames cannot be split into Ns={ns} equal snippets"
        )
    ls = t // ns
    return [Tensor(clip.frames[j * ls : (j + 1) * ls]) for j in range(ns)]


def tubelet_embed(
    snippet: Tensor,
    tubelet: tuple[int, int, int],
    weight: Parameter,
    bias: Parameter | None = None,
) -> Tensor:
    """Project non-overlapping kt x kh x kw x 3 voxel blocks to C-dim tokens.

    Accepts a single snippet (Ls, H, W, 3) or a batch with leading dims.
    """
    kt, kh, kw = tubelet
    *lead, ls, h, w, cin = snippet.shape
    if ls % kt or h % kh or w % kw:
        raise ConfigurationError(
            f"snippet dims ({ls}, {h}, {w}) not divisible by tubelet {tubelet}"
        )
    lt, lh, lw = ls // kt, h // kh, w // kw
    k = kt * kh * kw * cin
    if weight.shape != (k, weight.shape[1]):
        raise ConfigurationError(
            f"tubelet projection expects ({k}, C) weight, got {weight.shape}"
        )
    c = weight.shape[1]
    x = tt.reshape(snippet, (*lead, lt, kt, lh, kh, lw, kw, cin))
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(
        nl + i for i in (0, 2, 4, 1, 3, 5, 6)
    )  # (..., lt, lh, lw, kt, kh, kw, cin)
    x = tt.transpose(x, perm)
    batch = int(np.prod(lead)) if lead else 1
    x = tt.reshape(x, (batch, lt * lh * lw, k))
    out = tt.matmul(x, weight.tensor)
    if bias is not None:
        out = out + bias.tensor
    return tt.reshape(out, (*lead, lt, lh, lw, c))


def add_positional(tokens: Tensor, pe: PositionalEncodings, snippet_index: int) -> Tensor:
    """Add the shared snippet PE and this snippet's slice of the clip PE."""
    lt = pe.snippet_pe.shape[0]
    ns = pe.clip_pe.shape[0] // lt
    if not 0 <= snippet_index < ns:
        raise IndexError(f"snippet index {snippet_index} out of range [0, {ns})")
    clip_slice = tt.getitem(
        pe.clip_pe.tensor, slice(snippet_index * lt, (snippet_index + 1) * lt)
    )
    clip_slice = tt.reshape(clip_slice, (lt, 1, 1, pe.clip_pe.shape[1]))
    return tokens + pe.snippet_pe.tensor + clip_slice


def intra_snippet_block(tokens: Tensor, weights: BlockWeights) -> Tensor:
    """Transformer block over all tokens of ONE snippet (local by design)."""
    lt, lh, lw, c = tokens.shape
    x = tt.reshape(tokens, (lt * lh * lw, c))
    x = encoder_block(x, weights)
    return tt.reshape(x, (lt, lh, lw, c))


def place_blocks(n_blocks: int, k_prop: int, placement: str) -> list[int]:
    """0-based backbone block indices after which propagation runs."""
    if k_prop > n_blocks:
        raise ConfigurationError(f"k_prop={k_prop} exceeds n_blocks={n_blocks}")
    if placement == "evenly":
        if n_blocks % k_prop != 0:
            raise ConfigurationError(
                f"evenly placement needs n_blocks={n_blocks} divisible by k={k_prop}"
            )
        step = n_blocks // k_prop
        return [i * step + step - 1 for i in range(k_prop)]
    if placement == "first":
        return list(range(k_prop))
    if placement == "last":
        return list(range(n_blocks - k_prop, n_blocks))
    raise ConfigurationError(f"unknown placement {placement!r}")


_PROP_FNS = {
    "local": local_propagation,
    "global1d": global_propagation_1d,
    "global3d": global_propagation_3d,
}


def forward_backbone(
    clip: VideoClip, config: ModelConfig, weights: BackboneWeights
) -> FeatureMap:
    """Run the full backbone on one clip.

    Pipeline: partition -> tubelet embed -> positional encodings ->
    n intra-snippet blocks, with propagation applied on the concatenated
    clip-level grid after the blocks chosen by the placement rule.
    """
    kt = config.tubelet[0]
    if clip.frames.shape != (config.T, config.H, config.W, 3):
        raise ConfigurationError(
            f"clip shape {clip.frames.shape} does not match config "
            f"({config.T}, {config.H}, {config.W}, 3)"
        )
    ns, ls = config.Ns, config.snippet_len
    lt, lh, lw, c = (
        config.snippet_tokens,
        config.h_tokens,
        config.w_tokens,
        config.C,
    )
    s = lt * lh * lw

    snippets = tt.reshape(
        Tensor(clip.frames), (ns, ls, config.H, config.W, 3)
    )
    tok = tubelet_embed(snippets, config.tubelet, weights.embed_weight, weights.embed_bias)
    clip_pe = tt.reshape(weights.pe.clip_pe.tensor, (ns, lt, 1, 1, c))
    tok = tok + weights.pe.snippet_pe.tensor + clip_pe

    x = tt.reshape(tok, (ns, s, c))
    prop_at = {idx: i for i, idx in enumerate(weights.prop_indices)}
    prop_fn = _PROP_FNS.get(config.prop_kind)
    for i, block in enumerate(weights.blocks):
        x = encoder_block(x, block)
        if i in prop_at and prop_fn is not None:
            grid = tt.reshape(x, (ns * lt, lh, lw, c))
            grid = prop_fn(grid, weights.props[prop_at[i]])
            x = tt.reshape(grid, (ns, s, c))

    tokens = tt.reshape(x, (ns * lt, lh, lw, c))
    return FeatureMap(
        tokens=tokens, temporal_stride=kt, clip_origin_s=clip.origin_s
    )


def adapt_snippet_pe(pe: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the spatial grid of a snippet PE with bicubic interpolation.

    Used when loading parameters trained at a different frame resolution;
    each temporal slice is resized independently.
    """
    lt, _, _, c = pe.shape
    slices = [
        tt.bicubic_resize_2d(tt.getitem(pe, i), out_h, out_w) for i in range(lt)
    ]
    stacked = tt.concat([tt.reshape(s, (1, out_h, out_w, c)) for s in slices], axis=0)
    return stacked
