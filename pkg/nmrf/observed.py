"""Observed feature of a (sub-pixel) candidate label from warped left/right features."""

from __future__ import annotations

from typing import Tuple

import torch
import torch.nn as nn

from .errors import StereoInputError
from .layers import Mlp, NormalizingHead, require_finite


def grouped_correlation(left: torch.Tensor, right: torch.Tensor, groups: int) -> torch.Tensor:
    """``(N_g / N_c) * <left_g, right_g>`` for each of ``groups`` channel groups (last axis)."""

    channels = left.shape[-1]
    if channels % groups:
        raise StereoInputError(f"{channels} channels cannot be split into {groups} groups")
    products = (left * right).unflatten(-1, (groups, channels // groups))
    return products.sum(dim=-1) * (groups / channels)


def sample_right_features(
    right: torch.Tensor, disparity: torch.Tensor, scale: float
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Bilinearly sample ``right[b, :, i, j - z / scale]`` along columns.

    ``right`` is ``[B, C, H, W]`` and ``disparity`` ``[B, H, W, k]`` in full-resolution
    pixels. Samples whose column falls outside ``[0, W - 1]`` are zero vectors.
    Returns samples ``[B, H, W, k, C]`` and the validity mask ``[B, H, W, k]``.
    """

    batch, channels, height, width = right.shape
    k = disparity.shape[-1]
    columns = torch.arange(width, dtype=disparity.dtype, device=disparity.device).view(1, 1, width, 1)
    x = columns - disparity / scale
    valid = (x >= 0) & (x <= width - 1)

    x0 = torch.floor(x).detach()
    frac = (x - x0).unsqueeze(-1)
    left_index = x0.long().clamp(0, width - 1)
    right_index = (left_index + 1).clamp(max=width - 1)

    rows = right.permute(0, 2, 3, 1)

    def take(index: torch.Tensor) -> torch.Tensor:
        flat = index.reshape(batch, height, width * k, 1).expand(-1, -1, -1, channels)
        return torch.gather(rows, 2, flat).reshape(batch, height, width, k, channels)

    samples = take(left_index) * (1.0 - frac) + take(right_index) * frac
    return samples * valid.unsqueeze(-1).to(samples.dtype), valid


class ObservedFeatureEncoder(nn.Module):
    """``x_v = MLP(gamma_1(F_L) || gamma_1(F_R~) || grouped_corr(gamma_2(F_L), gamma_2(F_R~)))``."""

    def __init__(self, feature_channels: int, embed_dim: int = 128, num_groups: int = 8, scale: float = 8.0) -> None:
        super().__init__()
        if feature_channels % num_groups:
            raise StereoInputError(f"{feature_channels} channels cannot be split into {num_groups} groups")
        self.num_groups = num_groups
        self.scale = scale
        self.concat_norm = NormalizingHead(feature_channels, feature_channels)
        self.corr_norm = NormalizingHead(feature_channels, feature_channels)
        self.mlp = Mlp(2 * feature_channels + num_groups, embed_dim, embed_dim)

    def forward(self, left: torch.Tensor, right: torch.Tensor, disparity: torch.Tensor) -> torch.Tensor:
        require_finite(left, "left features")
        require_finite(right, "right features")
        require_finite(disparity, "label disparities")
        k = disparity.shape[-1]
        samples, valid = sample_right_features(right, disparity, self.scale)
        pixels = left.permute(0, 2, 3, 1).unsqueeze(3)

        left_concat = self.concat_norm(pixels).expand(-1, -1, -1, k, -1)
        concat = torch.cat([left_concat, self.concat_norm(samples)], dim=-1)
        corr = grouped_correlation(self.corr_norm(pixels), self.corr_norm(samples), self.num_groups)
        corr = corr * valid.unsqueeze(-1).to(corr.dtype)
        return self.mlp(torch.cat([concat, corr], dim=-1))
