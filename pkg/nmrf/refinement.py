"""Fine-level (1/4) refinement: one label per pixel, neighbor edges only, residual decoding."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from einops import rearrange

from .config import ModelConfig
from .feature_extractor import FeaturePyramid
from .layers import Mlp
from .mrf import NEIGHBOR, MessagePassingStack, build_graph
from .observed import ObservedFeatureEncoder

FINE_SCALE = 4


@dataclass
class RefinementLabels:
    """Single disparity label per fine pixel, ``[B, H/4, W/4, 1]`` in full-resolution pixels."""

    disparity: torch.Tensor


def pool_coarse_disparity(disparity: torch.Tensor, z_max: float, factor: int = FINE_SCALE) -> RefinementLabels:
    """Strided ``factor x factor`` median pooling of a full-resolution map ``[B, H, W]``.

    Uses the lower median of each block. The result is detached and clamped to ``[0, z_max]``.
    """

    blocks = rearrange(disparity.detach(), "b (h f1) (w f2) -> b h w (f1 f2)", f1=factor, f2=factor)
    pooled = blocks.median(dim=-1).values.clamp(0.0, float(z_max))
    return RefinementLabels(disparity=pooled.unsqueeze(-1))


class RefinementNetwork(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.window = config.refine_window
        self.z_max = config.z_max
        self.observed = ObservedFeatureEncoder(
            config.feature_channels, config.embed_dim, config.num_groups, scale=float(FINE_SCALE)
        )
        self.stack = MessagePassingStack(
            [NEIGHBOR] * config.num_refine_layers,
            config.embed_dim,
            config.num_heads,
            config.pe_dim,
            config.refine_window,
            adaptive_bias=config.adaptive_bias,
            position_aggregation=config.position_aggregation,
        )
        self.residual_head = Mlp(config.embed_dim, config.embed_dim, FINE_SCALE * FINE_SCALE)

    def decode_residuals(self, embeddings: torch.Tensor, labels: RefinementLabels) -> torch.Tensor:
        residual = self.residual_head(embeddings).unflatten(-1, (FINE_SCALE, FINE_SCALE))
        refined = labels.disparity[..., None, None] + residual
        refined = rearrange(refined, "b h w 1 f1 f2 -> b (h f1) (w f2)")
        return refined.clamp(0.0, float(self.z_max))

    def refine(self, labels: RefinementLabels, pyramid: FeaturePyramid) -> torch.Tensor:
        graph = build_graph(labels.disparity, self.window)
        embeddings = self.observed(pyramid.fine_left, pyramid.fine_right, labels.disparity)
        embeddings = self.stack(graph, embeddings)
        return self.decode_residuals(embeddings, labels)

    def forward(self, coarse_disparity: torch.Tensor, pyramid: FeaturePyramid) -> torch.Tensor:
        return self.refine(pool_coarse_disparity(coarse_disparity, self.z_max), pyramid)
