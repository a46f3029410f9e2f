"""Siamese convolutional backbone producing coarse (1/8) and fine (1/4) feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import StereoInputError
from .layers import require_finite

MIN_SIZE = 32


@dataclass(frozen=True)
class PaddingRecord:
    """Original size of an input padded to a multiple of 8 on the right/bottom."""

    height: int
    width: int
    pad_bottom: int
    pad_right: int

    @property
    def padded_height(self) -> int:
        return self.height + self.pad_bottom

    @property
    def padded_width(self) -> int:
        return self.width + self.pad_right

    def crop(self, tensor: torch.Tensor) -> torch.Tensor:
        """Crop a full-resolution ``[..., H, W]`` tensor back to the original size."""

        return tensor[..., : self.height, : self.width]


@dataclass
class FeaturePyramid:
    coarse_left: torch.Tensor
    coarse_right: torch.Tensor
    fine_left: torch.Tensor
    fine_right: torch.Tensor
    padding: PaddingRecord


def to_unit_range(image: torch.Tensor) -> torch.Tensor:
    """Convert 8-bit images to float in [0, 1]; float images pass through."""

    if image.dtype == torch.uint8:
        return image.float() / 255.0
    if not image.is_floating_point():
        raise StereoInputError(f"Unsupported image dtype {image.dtype}")
    return image


def pad_to_multiple(image: torch.Tensor, multiple: int = 8) -> Tuple[torch.Tensor, PaddingRecord]:
    """Replicate-pad ``[B, 3, H, W]`` on the right/bottom to a multiple of ``multiple``."""

    height, width = image.shape[-2:]
    pad_bottom = (-height) % multiple
    pad_right = (-width) % multiple
    record = PaddingRecord(height, width, pad_bottom, pad_right)
    if pad_bottom or pad_right:
        image = F.pad(image, (0, pad_right, 0, pad_bottom), mode="replicate")
    return image, record


def validate_pair(left: torch.Tensor, right: torch.Tensor) -> None:
    if left.shape != right.shape:
        raise StereoInputError(f"Left/right shape mismatch: {tuple(left.shape)} vs {tuple(right.shape)}")
    if left.dim() != 4 or left.shape[1] != 3:
        raise StereoInputError(f"Expected images shaped [B, 3, H, W], got {tuple(left.shape)}")
    height, width = left.shape[-2:]
    if height < MIN_SIZE or width < MIN_SIZE:
        raise StereoInputError(f"Images must be at least {MIN_SIZE}x{MIN_SIZE}, got {height}x{width}")
    require_finite(left, "left image")
    require_finite(right, "right image")


class ResidualBlock(nn.Module):
    def __init__(self, in_planes: int, planes: int, stride: int = 1) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, kernel_size=3, padding=1, stride=stride)
        self.norm1 = nn.InstanceNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, kernel_size=3, padding=1)
        self.relu = nn.ReLU(inplace=True)
        if stride == 1 and in_planes == planes:
            self.downsample = None
        else:
            self.downsample = nn.Conv2d(in_planes, planes, kernel_size=1, stride=stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.relu(self.norm1(self.conv1(x)))
        y = self.conv2(y)
        if self.downsample is not None:
            x = self.downsample(x)
        return self.relu(x + y)


class FeatureExtractor(nn.Module):
    """Strided-2 stem, residual blocks with strides 1, 2, 1, then a shared projection."""

    def __init__(self, channels: Sequence[int] = (64, 96, 128), out_channels: int = 256) -> None:
        super().__init__()
        c1, c2, c3 = channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c1, kernel_size=7, stride=2, padding=3),
            nn.InstanceNorm2d(c1),
            nn.ReLU(inplace=True),
        )
        self.layer1 = ResidualBlock(c1, c1, stride=1)
        self.layer2 = ResidualBlock(c1, c2, stride=2)
        self.layer3 = ResidualBlock(c2, c3, stride=1)
        self.projection = nn.Conv2d(c3, out_channels, kernel_size=1)
        self.out_channels = out_channels

    def backbone(self, images: torch.Tensor) -> torch.Tensor:
        x = 2.0 * images - 1.0
        return self.layer3(self.layer2(self.layer1(self.stem(x))))

    def forward(self, left: torch.Tensor, right: torch.Tensor) -> FeaturePyramid:
        left, right = to_unit_range(left), to_unit_range(right)
        validate_pair(left, right)
        left, record = pad_to_multiple(left)
        right, _ = pad_to_multiple(right)

        batch = left.shape[0]
        fine = self.backbone(torch.cat([left, right], dim=0))
        coarse = F.avg_pool2d(fine, kernel_size=2, stride=2)
        fine = self.projection(fine)
        coarse = self.projection(coarse)
        return FeaturePyramid(
            coarse_left=coarse[:batch],
            coarse_right=coarse[batch:],
            fine_left=fine[:batch],
            fine_right=fine[batch:],
            padding=record,
        )
