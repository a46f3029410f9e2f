"""Non-overlapping window partitioning of label grids shaped ``[B, H, W, k, C]``.

Tokens inside a window are ordered pixel-major (row, column) and then by label
slot, so token ``t`` belongs to window pixel ``t // k``.
"""

from __future__ import annotations

from typing import Tuple

import torch
import torch.nn.functional as F
from einops import rearrange


def padded_size(height: int, width: int, window: int) -> Tuple[int, int]:
    return -(-height // window) * window, -(-width // window) * window


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """``[B, H, W, k, C] -> [B * nWin, window * window * k, C]`` with zero padding."""

    _, height, width, _, _ = x.shape
    ph, pw = padded_size(height, width, window)
    x = F.pad(x, (0, 0, 0, 0, 0, pw - width, 0, ph - height))
    return rearrange(x, "b (nh m1) (nw m2) k c -> (b nh nw) (m1 m2 k) c", m1=window, m2=window)


def window_reverse(windows: torch.Tensor, window: int, batch: int, height: int, width: int, k: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`, cropping the padding away."""

    ph, pw = padded_size(height, width, window)
    x = rearrange(
        windows,
        "(b nh nw) (m1 m2 k) c -> b (nh m1) (nw m2) k c",
        b=batch,
        nh=ph // window,
        nw=pw // window,
        m1=window,
        m2=window,
        k=k,
    )
    return x[:, :height, :width]


def window_valid_mask(batch: int, height: int, width: int, k: int, window: int, device: torch.device) -> torch.Tensor:
    """``[B * nWin, T]`` boolean mask of tokens that are real labels (not padding)."""

    ones = torch.ones(batch, height, width, k, 1, device=device)
    return window_partition(ones, window)[..., 0] > 0.5


def token_pixels(window: int, k: int, device: torch.device) -> Tuple[torch.Tensor, torch.Tensor]:
    """Row and column of the window pixel owning each token."""

    pixel = torch.arange(window * window * k, device=device) // k
    return pixel // window, pixel % window


def relative_offset_index(window: int, k: int, device: torch.device) -> torch.Tensor:
    """``[T, T]`` index of ``p_u - p_v`` into a ``(2M-1) x (2M-1)`` table (row ``v``, column ``u``)."""

    rows, cols = token_pixels(window, k, device)
    span = 2 * window - 1
    d_row = rows[None, :] - rows[:, None] + window - 1
    d_col = cols[None, :] - cols[:, None] + window - 1
    return d_row * span + d_col


def same_pixel_mask(window: int, k: int, device: torch.device) -> torch.Tensor:
    """``[T, T]`` True where both tokens belong to the same window pixel."""

    pixel = torch.arange(window * window * k, device=device) // k
    return pixel[:, None] == pixel[None, :]
