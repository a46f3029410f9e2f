"""Coarse matching-cost volume and top-k label seed extraction."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import StereoInputError
from .layers import Mlp, NormalizingHead, sinusoidal_encoding

COARSE_SCALE = 8


@dataclass
class CostVolume:
    """Inner-product scores over coarse shifts ``z_c = 0..D_c`` stored as ``[B, H, W, D_c + 1]``.

    ``values`` holds 0 wherever column ``j - z_c`` falls outside the right view;
    ``valid`` marks the in-range entries.
    """

    values: torch.Tensor
    valid: torch.Tensor
    z_max: int

    @property
    def num_shifts(self) -> int:
        return self.values.shape[-1]

    def for_modal_detection(self) -> torch.Tensor:
        return self.values.masked_fill(~self.valid, float("-inf"))

    def for_init_loss(self) -> torch.Tensor:
        return self.values.masked_fill(~self.valid, 0.0)


@dataclass
class LabelSeeds:
    """Top-k disparity modals per coarse pixel, all tensors ``[B, H, W, k]``."""

    shift: torch.Tensor
    scores: torch.Tensor
    is_modal: torch.Tensor

    @property
    def disparity(self) -> torch.Tensor:
        """Seed disparity in full-resolution pixels."""

        return self.shift.to(self.scores.dtype) * COARSE_SCALE

    @property
    def k(self) -> int:
        return self.shift.shape[-1]


def build_cost_volume(coarse_left: torch.Tensor, coarse_right: torch.Tensor, z_max: int) -> CostVolume:
    """``values[b, i, j, z] = <left[b, :, i, j], right[b, :, i, j - z]>`` for coarse shifts ``z``."""

    if z_max <= 0:
        raise StereoInputError(f"z_max must be positive, got {z_max}")
    if z_max % COARSE_SCALE:
        raise StereoInputError(f"z_max must be a multiple of {COARSE_SCALE}, got {z_max}")
    width = coarse_left.shape[-1]
    num_shifts = z_max // COARSE_SCALE + 1

    slices = []
    for shift in range(num_shifts):
        if shift >= width:
            slices.append(coarse_left.new_zeros(coarse_left.shape[0], *coarse_left.shape[2:]))
            continue
        score = (coarse_left[..., shift:] * coarse_right[..., : width - shift]).sum(dim=1)
        slices.append(F.pad(score, (shift, 0)))
    values = torch.stack(slices, dim=-1)

    columns = torch.arange(width, device=values.device)
    shifts = torch.arange(num_shifts, device=values.device)
    valid = (columns[:, None] >= shifts[None, :]).expand_as(values)
    return CostVolume(values=values, valid=valid, z_max=z_max)


def local_maxima(scores: torch.Tensor) -> torch.Tensor:
    """Entries no smaller than both neighbours along the last axis (kernel-3 max pooling)."""

    flat = scores.reshape(-1, 1, scores.shape[-1])
    pooled = F.max_pool1d(flat, kernel_size=3, stride=1, padding=1).reshape(scores.shape)
    return (scores == pooled) & torch.isfinite(scores)


def extract_label_seeds(volume: CostVolume, k: int) -> LabelSeeds:
    """Pick ``k`` seeds per pixel: modals by descending score, then the best non-modal shifts.

    Ties resolve toward the lower disparity.
    """

    if k < 1:
        raise StereoInputError(f"k must be at least 1, got {k}")
    if k > volume.num_shifts:
        raise StereoInputError(f"k={k} exceeds the {volume.num_shifts} available disparity shifts")

    scores = volume.for_modal_detection().detach()
    modal = local_maxima(scores)

    by_score = torch.sort(scores, dim=-1, descending=True, stable=True).indices
    modal_first = torch.sort(
        torch.gather(modal, -1, by_score).to(scores.dtype), dim=-1, descending=True, stable=True
    ).indices
    order = torch.gather(by_score, -1, modal_first)[..., :k]
    return LabelSeeds(
        shift=order,
        scores=torch.gather(scores, -1, order),
        is_modal=torch.gather(modal, -1, order),
    )


def lookup_costs(volume: CostVolume, shift: torch.Tensor, radius: int) -> torch.Tensor:
    """Cost taps ``z - radius .. z + radius`` around each seed shift; out-of-range taps are 0.

    Returns ``[B, H, W, k, 2 * radius + 1]``.
    """

    values = F.pad(volume.for_init_loss(), (radius, radius))
    offsets = torch.arange(2 * radius + 1, device=shift.device)
    index = shift.unsqueeze(-1) + offsets
    batch, height, width, k = shift.shape
    taps = torch.gather(values, -1, index.reshape(batch, height, width, -1))
    return taps.reshape(batch, height, width, k, 2 * radius + 1)


class SeedFeatureEncoder(nn.Module):
    """Initial matching feature: ``MLP(gamma_3(lookup) || PE(z))``."""

    def __init__(self, embed_dim: int = 128, radius: int = 4, pe_dim: int = 32) -> None:
        super().__init__()
        taps = 2 * radius + 1
        self.radius = radius
        self.pe_dim = pe_dim
        self.cost_norm = NormalizingHead(taps, taps)
        self.mlp = Mlp(taps + pe_dim, embed_dim, embed_dim)

    def forward(self, volume: CostVolume, seeds: LabelSeeds) -> torch.Tensor:
        taps = lookup_costs(volume, seeds.shift, self.radius)
        encoding = sinusoidal_encoding(seeds.disparity.to(taps.dtype), self.pe_dim)
        return self.mlp(torch.cat([self.cost_norm(taps), encoding], dim=-1))
