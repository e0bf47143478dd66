"""Bi-level routing attention.

A feature map is tiled into an S x S grid of regions. Region-mean queries and
keys build a region adjacency matrix; each region keeps its top-k most related
regions, and token-to-token attention runs only over the keys and values
gathered from those routed regions. A depth-wise 5x5 convolution over the
value map (local context enhancement) is added to the attention output.

Any non-positive ``topk`` means route to all regions, which makes the sparse
path exactly equivalent to dense attention over every token.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    index_select,
    matmul,
    reshape,
    softmax,
    topk_indices_lastaxis,
    transpose,
)
from .nn import Conv2d, Linear, Module, linear_forward

TOPK_ALL = -2


class ConfigError(ValueError):
    """A configuration that cannot be applied to the given feature geometry."""


@dataclass(frozen=True)
class BraConfig:
    """Routing geometry for one attention layer.

    ``region_grid`` is the tile count per side (S), ``topk`` the number of
    routed regions per query region (non-positive = all S^2 regions), and
    ``heads`` the attention head count.
    """

    region_grid: int
    topk: int
    heads: int

    def resolved_topk(self) -> int:
        n_regions = self.region_grid * self.region_grid
        return n_regions if self.topk <= 0 else self.topk

    def validate(self, height: int, width: int, channels: int) -> None:
        s = self.region_grid
        if s < 1:
            raise ConfigError(f"region grid must be positive, got {s}")
        if height % s or width % s:
            raise ConfigError(f"feature size {height}x{width} not divisible by region grid {s}")
        if channels % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide {channels} channels")
        if self.topk > s * s:
            raise ConfigError(f"topk {self.topk} exceeds region count {s * s}")


@dataclass
class RoutingResult:
    """Region adjacency scores and the selected top-k region indices per row."""

    adjacency: Tensor  # [..., S^2, S^2]
    indices: np.ndarray  # [..., S^2, k], each row sorted ascending


# -- functional pieces ---------------------------------------------------------


def project_qkv(x: Tensor, wq: Linear, wk: Linear, wv: Linear):
    """Linear query/key/value projections of a [B, H, W, C] map."""
    return linear_forward(x, wq), linear_forward(x, wk), linear_forward(x, wv)


def partition_regions(x: Tensor, region_grid: int) -> Tensor:
    """[B, H, W, C] -> [B, S^2, HW/S^2, C]; tiles and tokens in row-major order."""
    b, h, w, c = x.shape
    s = region_grid
    if h % s or w % s:
        raise ConfigError(f"feature size {h}x{w} not divisible by region grid {s}")
    th, tw = h // s, w // s
    x = reshape(x, (b, s, th, s, tw, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b, s * s, th * tw, c))


def unpartition_regions(x: Tensor, height: int, width: int) -> Tensor:
    """Inverse of :func:`partition_regions`; bit-exact round trip."""
    b, n_regions, tokens, c = x.shape
    s = int(math.isqrt(n_regions))
    th, tw = height // s, width // s
    x = reshape(x, (b, s, s, th, tw, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b, height, width, c))


def region_pool(x_regions: Tensor) -> Tensor:
    """Mean over each region's token axis: [B, S^2, M, C] -> [B, S^2, C]."""
    return x_regions.mean(axis=2)


def route_regions(q_region: Tensor, k_region: Tensor, topk: int) -> RoutingResult:
    """Adjacency = Qr Kr^T; per-row top-k region indices, ascending."""
    n_regions = q_region.shape[-2]
    if topk > n_regions:
        raise ConfigError(f"topk {topk} exceeds region count {n_regions}")
    axes = tuple(range(k_region.ndim - 2)) + (k_region.ndim - 1, k_region.ndim - 2)
    adjacency = matmul(q_region, transpose(k_region, axes))
    indices = topk_indices_lastaxis(adjacency.data, topk)
    return RoutingResult(adjacency=adjacency, indices=indices)


def gather_kv(k_regions: Tensor, v_regions: Tensor, indices: np.ndarray):
    """Stack the token rows of each query region's routed regions, in index order.

    Inputs are partitioned [B, S^2, M, C] maps and [B, S^2, k] indices; outputs
    are [B, S^2, k*M, C]. Backward scatters additively onto the source tokens.
    """
    b, n_regions, m, c = k_regions.shape
    k = indices.shape[-1]
    flat_idx = (np.arange(b, dtype=np.int64)[:, None, None] * n_regions + indices).reshape(-1)

    def gather(t: Tensor) -> Tensor:
        flat = reshape(t, (b * n_regions, m, c))
        picked = index_select(flat, flat_idx)
        return reshape(picked, (b, n_regions, k * m, c))

    return gather(k_regions), gather(v_regions)


def token_attention(q_regions: Tensor, k_gathered: Tensor, v_gathered: Tensor,
                    v_spatial: Tensor, heads: int, lce: Conv2d,
                    out_proj: Linear | None = None) -> Tensor:
    """Per-head softmax attention inside each region's routed key set, plus LCE.

    Queries attend to their gathered keys with 1/sqrt(head_width) scaling;
    heads are concatenated, optionally mixed by ``out_proj``, returned to
    spatial layout, and the depth-wise convolution of the value map is added.
    """
    b, n_regions, m, c = q_regions.shape
    if c % heads:
        raise ConfigError(f"{heads} heads do not divide {c} channels")
    d = c // heads
    length = k_gathered.shape[2]

    def split_heads(t: Tensor, n_tokens: int) -> Tensor:
        t = reshape(t, (b, n_regions, n_tokens, heads, d))
        return transpose(t, (0, 1, 3, 2, 4))  # [B, S^2, heads, tokens, d]

    q = split_heads(q_regions, m)
    k = split_heads(k_gathered, length)
    v = split_heads(v_gathered, length)

    logits = matmul(q, transpose(k, (0, 1, 2, 4, 3))) * (1.0 / math.sqrt(d))
    weights = softmax(logits, axis=-1)
    per_head = matmul(weights, v)  # [B, S^2, heads, M, d]
    merged = reshape(transpose(per_head, (0, 1, 3, 2, 4)), (b, n_regions, m, c))
    if out_proj is not None:
        merged = linear_forward(merged, out_proj)

    _, height, width, _ = v_spatial.shape
    attn_spatial = unpartition_regions(merged, height, width)

    v_chw = transpose(v_spatial, (0, 3, 1, 2))
    local = transpose(lce.forward(v_chw), (0, 2, 3, 1))
    return attn_spatial + local


def bra_forward(x: Tensor, wq: Linear, wk: Linear, wv: Linear, wo: Linear | None,
                lce: Conv2d, cfg: BraConfig) -> Tensor:
    """Full routing attention pass over a [B, H, W, C] map; shape preserving."""
    _, h, w, c = x.shape
    cfg.validate(h, w, c)
    q, k, v = project_qkv(x, wq, wk, wv)
    s = cfg.region_grid
    q_part = partition_regions(q, s)
    k_part = partition_regions(k, s)
    v_part = partition_regions(v, s)
    routing = route_regions(region_pool(q_part), region_pool(k_part), cfg.resolved_topk())
    k_g, v_g = gather_kv(k_part, v_part, routing.indices)
    return token_attention(q_part, k_g, v_g, v, cfg.heads, lce, wo)


# -- layer -----------------------------------------------------------------------


class BiLevelRoutingAttention(Module):
    """Routing attention layer owning its projections and local-context conv."""

    def __init__(self, channels: int, cfg: BraConfig, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.wq = Linear(channels, channels, bias=False, rng=rng, dtype=dtype)
        self.wk = Linear(channels, channels, bias=False, rng=rng, dtype=dtype)
        self.wv = Linear(channels, channels, bias=False, rng=rng, dtype=dtype)
        self.wo = Linear(channels, channels, rng=rng, dtype=dtype)
        self.lce = Conv2d(channels, channels, 5, padding=2, groups=channels, rng=rng, dtype=dtype)
        self.cfg = cfg

    def forward(self, x: Tensor) -> Tensor:
        return bra_forward(x, self.wq, self.wk, self.wv, self.wo, self.lce, self.cfg)
