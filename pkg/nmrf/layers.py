"""Small building blocks shared by the proposal, inference and refinement stages."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import StereoInputError


def require_finite(tensor: torch.Tensor, name: str) -> None:
    """Reject NaN/Inf inputs with a descriptive error."""

    if not torch.isfinite(tensor).all():
        raise StereoInputError(f"{name} contains non-finite values")


def sinusoidal_encoding(values: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Encode scalar disparities as ``[sin(f_i z) ..., cos(f_i z) ...]`` of width ``dim``."""

    if dim % 2:
        raise ValueError(f"encoding width must be even, got {dim}")
    half = dim // 2
    exponents = torch.arange(half, dtype=values.dtype, device=values.device) / half
    freqs = torch.exp(-math.log(max_period) * exponents)
    args = values.unsqueeze(-1) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis restricted to ``mask``; rows with no partner become zeros."""

    fill = torch.finfo(logits.dtype).min
    weights = torch.softmax(logits.masked_fill(~mask, fill), dim=-1)
    return weights.masked_fill(~mask, 0.0)


class NormalizingHead(nn.Module):
    """Two linear layers with per-label normalization and activation after the first."""

    def __init__(self, in_dim: int, out_dim: int, hidden_dim: int | None = None) -> None:
        super().__init__()
        hidden_dim = hidden_dim or in_dim
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.norm = nn.LayerNorm(hidden_dim, elementwise_affine=False)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.norm(self.fc1(x))))


class Mlp(nn.Module):
    """Feed-forward block; optionally pre-normalized."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, *, pre_norm: bool = False) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(in_dim) if pre_norm else nn.Identity()
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(self.norm(x))))

    def zero_output(self) -> None:
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)
