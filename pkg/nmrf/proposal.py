"""Disparity Proposal Network: propagate label seeds and decode k sub-pixel candidates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
from einops import rearrange

from .config import ModelConfig
from .cost_volume import CostVolume, LabelSeeds, SeedFeatureEncoder, extract_label_seeds
from .layers import Mlp, masked_softmax
from .windows import window_partition, window_reverse, window_valid_mask


@dataclass
class CandidateLabelSet:
    """Pruned label space: ``disparity`` is ``[B, H, W, k]`` in full-resolution pixels."""

    disparity: torch.Tensor
    features: torch.Tensor
    seed_disparity: torch.Tensor

    @property
    def k(self) -> int:
        return self.disparity.shape[-1]


def cross_window_partners(position: Tuple[int, int], grid: Tuple[int, int], k: int = 1) -> List[Tuple[int, int, int]]:
    """Seed slots ``(row, col, slot)`` sharing the row or the column of ``position``, itself included."""

    row, col = position
    height, width = grid
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(f"position {position} is outside a {height}x{width} grid")
    pixels = {(row, j) for j in range(width)} | {(i, col) for i in range(height)}
    return sorted((i, j, slot) for i, j in pixels for slot in range(k))


def _slot_mask(length: int, k: int, device: torch.device) -> torch.Tensor:
    """Allow every pair except distinct seeds of the same pixel."""

    pixel = torch.arange(length * k, device=device) // k
    eye = torch.eye(length * k, dtype=torch.bool, device=device)
    return (pixel[:, None] != pixel[None, :]) | eye


class CrossWindowBlock(nn.Module):
    """Cross-shaped stripe attention: half of the heads along rows, half along columns.

    Stripes are one pixel wide. Values carry a depthwise-convolution positional
    enhancement along the stripe direction.
    """

    def __init__(self, dim: int, num_heads: int = 4, mlp_ratio: int = 2, mask_same_pixel: bool = False) -> None:
        super().__init__()
        half = dim // 2
        self.heads_per_direction = num_heads // 2
        self.scale = (dim // num_heads) ** -0.5
        self.mask_same_pixel = mask_same_pixel
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.lepe_row = nn.Conv2d(half, half, kernel_size=(1, 3), padding=(0, 1), groups=half)
        self.lepe_col = nn.Conv2d(half, half, kernel_size=(3, 1), padding=(1, 0), groups=half)
        self.proj = nn.Linear(dim, dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, dim, pre_norm=True)

    def _stripe_attention(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, along: str) -> torch.Tensor:
        batch, height, width, slots, _ = q.shape
        if along == "row":
            split, merge, length = "b h w s (n d) -> (b h) n (w s) d", "(b h) n (w s) d -> b h w s (n d)", width
        else:
            split, merge, length = "b h w s (n d) -> (b w) n (h s) d", "(b w) n (h s) d -> b h w s (n d)", height
        qs, ks, vs = (rearrange(t, split, n=self.heads_per_direction) for t in (q, k, v))
        logits = (qs @ ks.transpose(-1, -2)) * self.scale
        if self.mask_same_pixel:
            attn = masked_softmax(logits, _slot_mask(length, slots, q.device))
        else:
            attn = logits.softmax(dim=-1)
        return rearrange(attn @ vs, merge, b=batch, h=height, w=width, s=slots)

    @staticmethod
    def _lepe(v: torch.Tensor, conv: nn.Conv2d) -> torch.Tensor:
        batch, height, width, slots, _ = v.shape
        grid = rearrange(v, "b h w s c -> (b s) c h w")
        return rearrange(conv(grid), "(b s) c h w -> b h w s c", b=batch, s=slots)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        half = x.shape[-1] // 2
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        rows = self._stripe_attention(q[..., :half], k[..., :half], v[..., :half], "row")
        rows = rows + self._lepe(v[..., :half], self.lepe_row)
        cols = self._stripe_attention(q[..., half:], k[..., half:], v[..., half:], "col")
        cols = cols + self._lepe(v[..., half:], self.lepe_col)
        x = x + self.proj(torch.cat([rows, cols], dim=-1))
        return x + self.mlp(x)


class LocalWindowBlock(nn.Module):
    """Attention among all seeds inside non-overlapping local windows."""

    def __init__(self, dim: int, num_heads: int = 4, window: int = 8, mlp_ratio: int = 2) -> None:
        super().__init__()
        self.num_heads = num_heads
        self.window = window
        self.scale = (dim // num_heads) ** -0.5
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.lepe = nn.Conv2d(dim, dim, kernel_size=3, padding=1, groups=dim)
        self.proj = nn.Linear(dim, dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, dim, pre_norm=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, height, width, slots, _ = x.shape
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        qw, kw, vw = (
            rearrange(window_partition(t, self.window), "w t (n d) -> w n t d", n=self.num_heads) for t in (q, k, v)
        )
        valid = window_valid_mask(batch, height, width, slots, self.window, x.device)
        logits = (qw @ kw.transpose(-1, -2)) * self.scale
        attn = masked_softmax(logits, valid[:, None, None, :])
        out = rearrange(attn @ vw, "w n t d -> w t (n d)")
        out = window_reverse(out, self.window, batch, height, width, slots)
        grid = rearrange(v, "b h w s c -> (b s) c h w")
        out = out + rearrange(self.lepe(grid), "(b s) c h w -> b h w s c", b=batch, s=slots)
        x = x + self.proj(out)
        return x + self.mlp(x)


class ProposalNetwork(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.k = config.k
        self.z_max = config.z_max
        dim = config.embed_dim
        self.seed_encoder = SeedFeatureEncoder(dim, config.lookup_radius, config.pe_dim)
        if config.dpn_attention == "cross":
            blocks = [
                CrossWindowBlock(dim, config.num_heads, mask_same_pixel=config.dpn_mask_same_pixel)
                for _ in range(config.num_proposal_layers)
            ]
        else:
            blocks = [
                LocalWindowBlock(dim, config.num_heads, window=config.dpn_local_window)
                for _ in range(config.num_proposal_layers)
            ]
        self.blocks = nn.ModuleList(blocks)
        self.residual_head = Mlp(dim, dim, 1)

    def propagate_seeds(self, features: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            features = block(features)
        return features

    def decode_proposals(self, features: torch.Tensor, seeds: LabelSeeds) -> CandidateLabelSet:
        seed_disparity = seeds.disparity.to(features.dtype)
        residual = self.residual_head(features).squeeze(-1)
        disparity = (seed_disparity + residual).clamp(0.0, float(self.z_max))
        return CandidateLabelSet(disparity=disparity, features=features, seed_disparity=seed_disparity)

    def forward(self, volume: CostVolume, k: Optional[int] = None) -> Tuple[LabelSeeds, CandidateLabelSet]:
        seeds = extract_label_seeds(volume, k or self.k)
        features = self.seed_encoder(volume, seeds)
        return seeds, self.decode_proposals(self.propagate_seeds(features), seeds)
