"""Neural MRF inference over candidate labels.

Nodes are candidate labels laid out as ``[B, H, W, k]``. Neighbor edges join
labels of different pixels inside the same non-overlapping ``M x M`` window;
self edges join the labels of one pixel. Embeddings start from the observed
label features and are updated by attentional message passing layers that
alternate between the two edge types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import torch
import torch.nn as nn
from einops import rearrange

from .config import ModelConfig
from .cost_volume import COARSE_SCALE
from .feature_extractor import FeaturePyramid, PaddingRecord
from .layers import Mlp, masked_softmax, sinusoidal_encoding
from .observed import ObservedFeatureEncoder
from .proposal import CandidateLabelSet
from .windows import (
    relative_offset_index,
    same_pixel_mask,
    window_partition,
    window_reverse,
    window_valid_mask,
)

NEIGHBOR, SELF, NONE = "neighbor", "self", "none"


@dataclass
class MRFGraph:
    disparity: torch.Tensor
    window: int
    window_valid: torch.Tensor
    neighbor_mask: torch.Tensor
    relative_index: torch.Tensor
    self_mask: torch.Tensor

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        batch, height, width, k = self.disparity.shape
        return batch, height, width, k

    def to_windows(self, x: torch.Tensor) -> torch.Tensor:
        return window_partition(x, self.window)

    def from_windows(self, windows: torch.Tensor) -> torch.Tensor:
        batch, height, width, k = self.shape
        return window_reverse(windows, self.window, batch, height, width, k)

    def neighbor_degree(self) -> torch.Tensor:
        """Number of neighbor partners of every node, ``[B, H, W, k]``."""

        counts = self.neighbor_mask.sum(dim=-1, keepdim=True).to(self.disparity.dtype)
        return self.from_windows(counts)[..., 0].round().long()

    def self_degree(self) -> torch.Tensor:
        counts = self.self_mask.sum(dim=-1)
        return counts.expand(*self.shape)

    def edges(self, kind: str) -> Set[Tuple[Tuple[int, int, int, int], Tuple[int, int, int, int]]]:
        """Directed edges ``(v, u)`` as node coordinates ``(b, i, j, slot)``; meant for small graphs."""

        batch, height, width, k = self.shape
        if kind == SELF:
            return {
                ((b, i, j, s), (b, i, j, t))
                for b in range(batch)
                for i in range(height)
                for j in range(width)
                for s in range(k)
                for t in range(k)
                if bool(self.self_mask[s, t])
            }
        ids = torch.arange(1, batch * height * width * k + 1, dtype=torch.float64, device=self.disparity.device)
        token_ids = self.to_windows(ids.view(batch, height, width, k, 1))[..., 0].long() - 1
        pairs = set()
        for w, v, u in self.neighbor_mask.nonzero().tolist():
            pairs.add((_unravel(token_ids[w, v].item(), self.shape), _unravel(token_ids[w, u].item(), self.shape)))
        return pairs


def _unravel(flat: int, shape: Sequence[int]) -> Tuple[int, int, int, int]:
    coords = []
    for size in reversed(shape):
        coords.append(flat % size)
        flat //= size
    return tuple(reversed(coords))  # type: ignore[return-value]


def build_graph(disparity: torch.Tensor, window: int) -> MRFGraph:
    """Build the label graph for candidate disparities ``[B, H, W, k]`` and window size ``M``."""

    if window <= 0 or window % 2:
        raise ValueError(f"window must be a positive even number, got {window}")
    batch, height, width, k = disparity.shape
    device = disparity.device
    valid = window_valid_mask(batch, height, width, k, window, device)
    same_pixel = same_pixel_mask(window, k, device)
    return MRFGraph(
        disparity=disparity,
        window=window,
        window_valid=valid,
        neighbor_mask=valid[:, :, None] & valid[:, None, :] & ~same_pixel[None],
        relative_index=relative_offset_index(window, k, device),
        self_mask=~torch.eye(k, dtype=torch.bool, device=device),
    )


class PositionalTable(nn.Module):
    """Learnable relative-offset encodings ``P[3, 2M-1, 2M-1, D]`` for query, key and value."""

    KINDS = ("query", "key", "value")

    def __init__(self, window: int, dim: int) -> None:
        super().__init__()
        self.window = window
        span = 2 * window - 1
        self.weight = nn.Parameter(torch.empty(3, span, span, dim))
        nn.init.trunc_normal_(self.weight, std=0.02)

    def index(self, d_row: int, d_col: int) -> Tuple[int, int]:
        limit = self.window - 1
        if abs(d_row) > limit or abs(d_col) > limit:
            raise ValueError(f"offset ({d_row}, {d_col}) exceeds the window span +-{limit}")
        return d_row + limit, d_col + limit

    def table(self, kind: str) -> torch.Tensor:
        return self.weight[self.KINDS.index(kind)].flatten(0, 1)


class LabelAttention(nn.Module):
    """Multi-head attention over graph partners with content-adaptive positional bias.

    ``logit(v, u) = q_v.k_u + q_v.r^k(u-v) + k_u.r^q(u-v)`` and
    ``m_v = sum_u alpha_vu (v_u + r^v(u-v))``. The positional terms are only used
    when a relative index is supplied (neighbor edges).
    Embeddings are concatenated with the disparity encoding and projected back to
    ``dim`` before the q/k/v projection.
    """

    def __init__(
        self,
        dim: int,
        num_heads: int = 4,
        pe_dim: int = 32,
        window: Optional[int] = None,
        adaptive_bias: bool = True,
        position_aggregation: bool = True,
    ) -> None:
        super().__init__()
        self.num_heads = num_heads
        self.pe_dim = pe_dim
        self.scale = (dim // num_heads) ** -0.5
        self.adaptive_bias = adaptive_bias
        self.position_aggregation = position_aggregation
        self.norm = nn.LayerNorm(dim)
        self.fuse = nn.Linear(dim + pe_dim, dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.positional: Optional[PositionalTable] = None
        self.fixed_bias: Optional[nn.Parameter] = None
        if window is not None:
            self.positional = PositionalTable(window, dim)
            if not adaptive_bias:
                self.fixed_bias = nn.Parameter(torch.empty((2 * window - 1) ** 2, num_heads))
                nn.init.trunc_normal_(self.fixed_bias, std=0.02)

    def forward(
        self,
        tokens: torch.Tensor,
        disparity: torch.Tensor,
        mask: torch.Tensor,
        relative_index: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        n, t, _ = tokens.shape
        heads = self.num_heads
        encoding = sinusoidal_encoding(disparity.to(tokens.dtype), self.pe_dim)
        x = self.fuse(torch.cat([self.norm(tokens), encoding], dim=-1))
        q, k, v = rearrange(self.qkv(x), "n t (three h d) -> three n h t d", three=3, h=heads)
        logits = q @ k.transpose(-1, -2)

        use_positions = relative_index is not None and self.positional is not None
        if use_positions:
            rel = relative_index.expand(n, heads, t, t)
            if self.adaptive_bias:
                r_q = self.positional.table("query").unflatten(-1, (heads, -1))
                r_k = self.positional.table("key").unflatten(-1, (heads, -1))
                q_rk = torch.einsum("nhtd,rhd->nhtr", q, r_k)
                k_rq = torch.einsum("nhud,rhd->nhur", k, r_q)
                logits = logits + torch.gather(q_rk, -1, rel)
                logits = logits + torch.gather(k_rq, -1, rel.transpose(-1, -2)).transpose(-1, -2)
            else:
                logits = logits + self.fixed_bias[relative_index].permute(2, 0, 1)

        attn = masked_softmax(logits * self.scale, mask.unsqueeze(-3))
        out = attn @ v
        if use_positions and self.position_aggregation:
            r_v = self.positional.table("value").unflatten(-1, (heads, -1))
            bins = attn.new_zeros(n, heads, t, r_v.shape[0]).scatter_add(-1, rel, attn)
            out = out + torch.einsum("nhvr,rhd->nhvd", bins, r_v)
        messages = self.proj(rearrange(out, "n h t d -> n t (h d)"))
        # nodes without partners receive no message
        return messages * mask.any(dim=-1).unsqueeze(-1).to(messages.dtype)


class MessagePassingLayer(nn.Module):
    """``mu_hat = mu + m``; ``mu' = MLP(mu_hat) + mu_hat``."""

    def __init__(self, edge_type: str, attention: Optional[LabelAttention], dim: int, mlp_ratio: int = 2) -> None:
        super().__init__()
        if edge_type not in (NEIGHBOR, SELF, NONE):
            raise ValueError(f"unknown edge type {edge_type!r}")
        self.edge_type = edge_type
        self.attention = attention
        self.mlp = Mlp(dim, mlp_ratio * dim, dim, pre_norm=True)

    def message(self, graph: MRFGraph, embeddings: torch.Tensor) -> torch.Tensor:
        if self.edge_type == NONE or self.attention is None:
            return torch.zeros_like(embeddings)
        if self.edge_type == NEIGHBOR:
            tokens = graph.to_windows(embeddings)
            disparity = graph.to_windows(graph.disparity.unsqueeze(-1))[..., 0]
            messages = self.attention(tokens, disparity, graph.neighbor_mask, graph.relative_index)
            return graph.from_windows(messages)
        k, dim = embeddings.shape[-2:]
        tokens = embeddings.reshape(-1, k, dim)
        messages = self.attention(tokens, graph.disparity.reshape(-1, k), graph.self_mask)
        return messages.reshape(embeddings.shape)

    def forward(self, graph: MRFGraph, embeddings: torch.Tensor) -> torch.Tensor:
        updated = embeddings + self.message(graph, embeddings)
        return updated + self.mlp(updated)


def inference_schedule(num_layers: int, self_edges: str = "on") -> List[str]:
    """Even layers aggregate neighbor edges, odd layers self edges (or nothing when disabled)."""

    odd = NONE if self_edges == "off" else SELF
    return [NEIGHBOR if layer % 2 == 0 else odd for layer in range(num_layers)]


class MessagePassingStack(nn.Module):
    def __init__(
        self,
        schedule: Sequence[str],
        dim: int,
        num_heads: int,
        pe_dim: int,
        window: int,
        adaptive_bias: bool = True,
        position_aggregation: bool = True,
        share_self_attention: bool = False,
    ) -> None:
        super().__init__()
        layers = []
        last_neighbor: Optional[LabelAttention] = None
        for edge_type in schedule:
            attention: Optional[LabelAttention] = None
            if edge_type == NEIGHBOR:
                attention = LabelAttention(dim, num_heads, pe_dim, window, adaptive_bias, position_aggregation)
                last_neighbor = attention
            elif edge_type == SELF:
                if share_self_attention and last_neighbor is not None:
                    attention = last_neighbor
                else:
                    attention = LabelAttention(dim, num_heads, pe_dim, None, adaptive_bias, position_aggregation)
            layers.append(MessagePassingLayer(edge_type, attention, dim))
        self.layers = nn.ModuleList(layers)

    def forward(self, graph: MRFGraph, embeddings: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            embeddings = layer(graph, embeddings)
        return embeddings


@dataclass
class DisparityField:
    """Full-resolution hypotheses ``[B, k, H, W]`` with posteriors and the WTA map ``[B, H, W]``."""

    hypotheses: torch.Tensor
    probabilities: torch.Tensor
    disparity: torch.Tensor
    winner: torch.Tensor

    def crop(self, padding: PaddingRecord) -> "DisparityField":
        return DisparityField(
            hypotheses=padding.crop(self.hypotheses),
            probabilities=padding.crop(self.probabilities),
            disparity=padding.crop(self.disparity),
            winner=padding.crop(self.winner),
        )


def winner_takes_all(hypotheses: torch.Tensor, probabilities: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Most probable hypothesis per pixel; ties go to the lower disparity."""

    best = probabilities.max(dim=1, keepdim=True).values
    contenders = hypotheses.masked_fill(probabilities < best, math.inf)
    disparity, winner = contenders.min(dim=1)
    return disparity, winner


def decode_disparity(labels: torch.Tensor, offsets: torch.Tensor, logits: torch.Tensor) -> DisparityField:
    """Expand per-label ``f x f`` offsets/logits to full resolution and pick winners.

    ``labels`` is ``[B, H, W, k]``; ``offsets`` and ``logits`` are ``[B, H, W, k, f, f]``.
    """

    layout = "b h w k f1 f2 -> b k (h f1) (w f2)"
    hypotheses = rearrange(labels[..., None, None] + offsets, layout)
    probabilities = torch.softmax(rearrange(logits, layout), dim=1)
    disparity, winner = winner_takes_all(hypotheses, probabilities)
    return DisparityField(hypotheses, probabilities, disparity, winner)


class DisparityDecoder(nn.Module):
    def __init__(self, dim: int, factor: int = COARSE_SCALE) -> None:
        super().__init__()
        self.factor = factor
        self.head = Mlp(dim, dim, 2 * factor * factor)

    def forward(self, embeddings: torch.Tensor, labels: torch.Tensor) -> DisparityField:
        out = self.head(embeddings).unflatten(-1, (2, self.factor, self.factor))
        return decode_disparity(labels, out[..., 0, :, :], out[..., 1, :, :])


class NeuralMRF(nn.Module):
    """Coarse-level inference: observed features, stacked message passing layers, decoding."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.window = config.window
        self.observed = ObservedFeatureEncoder(
            config.feature_channels, config.embed_dim, config.num_groups, scale=float(COARSE_SCALE)
        )
        self.stack = MessagePassingStack(
            inference_schedule(config.num_inference_layers, config.self_edges),
            config.embed_dim,
            config.num_heads,
            config.pe_dim,
            config.window,
            adaptive_bias=config.adaptive_bias,
            position_aggregation=config.position_aggregation,
            share_self_attention=config.self_edges == "shared",
        )
        self.decoder = DisparityDecoder(config.embed_dim, COARSE_SCALE)

    def forward(self, pyramid: FeaturePyramid, candidates: CandidateLabelSet) -> Tuple[MRFGraph, DisparityField]:
        labels = candidates.disparity.detach()
        graph = build_graph(labels, self.window)
        embeddings = self.observed(pyramid.coarse_left, pyramid.coarse_right, labels)
        embeddings = self.stack(graph, embeddings)
        return graph, self.decoder(embeddings, labels)
