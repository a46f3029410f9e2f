"""Procedural stereo pairs built from textured planar layers.

Each layer is a plane ``d(x, y) = offset + slope_x * x + slope_y * y`` in left-view
coordinates, bounded by a rectangle or ellipse (the first layer covers the whole
image). Layers are stacked back to front and every layer's disparities stay
inside its own band, so a later layer is always in front of earlier ones.
The right view is rendered by inverting the warp analytically per layer:
``x_L = (x_R + offset + slope_y * y) / (1 - slope_x)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .config import SyntheticDataConfig
from .errors import StereoInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlanarLayer:
    offset: float
    slope_x: float = 0.0
    slope_y: float = 0.0
    shape: str = "full"
    center: Tuple[float, float] = (0.0, 0.0)
    half_size: Tuple[float, float] = (0.0, 0.0)

    def disparity(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.offset + self.slope_x * x + self.slope_y * y

    def covers(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.shape == "full":
            return np.ones(np.broadcast(x, y).shape, dtype=bool)
        (cy, cx), (ry, rx) = self.center, self.half_size
        if self.shape == "rect":
            return (np.abs(x - cx) <= rx) & (np.abs(y - cy) <= ry)
        if self.shape == "ellipse":
            return ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0
        raise ValueError(f"unknown layer shape {self.shape!r}")

    def left_column(self, x_right: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Left-view column whose point on this plane projects to ``x_right``."""

        return (x_right + self.offset + self.slope_y * y) / (1.0 - self.slope_x)


@dataclass
class SyntheticScene:
    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray
    valid: np.ndarray
    layer_index: np.ndarray
    seed: int


def make_texture(rng: np.random.Generator, height: int, width: int, kind: str = "dots") -> np.ndarray:
    """``[height, width, 3]`` texture in [0, 1]."""

    if kind == "dots":
        texture = np.tile(rng.uniform(0.2, 0.8, size=3), (height, width, 1))
        count = int(0.3 * height * width)
        rows = rng.integers(0, height, size=count)
        cols = rng.integers(0, width, size=count)
        texture[rows, cols] = rng.uniform(0.0, 1.0, size=(count, 3))
        return np.clip(gaussian_filter(texture, sigma=(0.7, 0.7, 0.0)), 0.0, 1.0)
    if kind == "gradient":
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        texture = np.zeros((height, width, 3))
        for channel in range(3):
            for _ in range(3):
                fy, fx = rng.uniform(0.02, 0.3, size=2) * rng.choice([-1.0, 1.0], size=2)
                texture[..., channel] += np.sin(2 * math.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * math.pi))
        texture = (texture - texture.min()) / max(np.ptp(texture), 1e-6)
        return gaussian_filter(texture, sigma=(0.5, 0.5, 0.0))
    raise StereoInputError(f"Unknown texture kind {kind!r}")


def _sample(texture: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    coords = np.stack([rows, cols])
    return np.stack([map_coordinates(texture[..., c], coords, order=1, mode="nearest") for c in range(3)], axis=-1)


def render_scene(
    layers: Sequence[PlanarLayer], textures: Sequence[np.ndarray], height: int, width: int, seed: int = 0
) -> SyntheticScene:
    """Render both views, the left-view ground truth and its occlusion-aware validity."""

    if not layers or layers[0].shape != "full":
        raise StereoInputError("The first layer must cover the whole image")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)

    top = np.zeros((height, width), dtype=np.int64)
    for index, layer in enumerate(layers):
        top[layer.covers(xs, ys)] = index
    disparity = np.zeros((height, width))
    left = np.zeros((height, width, 3))
    for index, layer in enumerate(layers):
        here = top == index
        disparity[here] = layer.disparity(xs, ys)[here]
        left[here] = _sample(textures[index], ys[here], xs[here])

    right = np.zeros((height, width, 3))
    right_top = np.zeros((height, width), dtype=np.int64)
    right_cols = np.zeros((height, width))
    for index, layer in enumerate(layers):
        columns = layer.left_column(xs, ys)
        hit = layer.covers(columns, ys)
        right_top[hit] = index
        right_cols[hit] = columns[hit]
    for index in range(len(layers)):
        here = right_top == index
        right[here] = _sample(textures[index], ys[here], right_cols[here])

    x_right = xs - disparity
    valid = x_right >= 0
    for index, layer in enumerate(layers):
        occluder = (index > top) & layer.covers(layer.left_column(x_right, ys), ys)
        valid &= ~occluder

    return SyntheticScene(
        left=left.astype(np.float32),
        right=right.astype(np.float32),
        disparity=disparity.astype(np.float32),
        valid=valid,
        layer_index=top,
        seed=seed,
    )


def sample_layers(config: SyntheticDataConfig, rng: np.random.Generator) -> List[PlanarLayer]:
    height, width = config.height, config.width
    count = int(rng.integers(config.min_layers, config.max_layers + 1))
    edges = np.linspace(config.min_disparity, config.max_disparity, count + 1)
    layers = []
    for index in range(count):
        low, high = edges[index], edges[index + 1]
        band = high - low
        middle = rng.uniform(low + 0.25 * band, high - 0.25 * band) if band > 0 else low
        slope_x = slope_y = 0.0
        if config.slanted and band > 0:
            slope_x = rng.uniform(-0.25, 0.25) * band / width
            slope_y = rng.uniform(-0.25, 0.25) * band / height
        offset = middle - slope_x * (width - 1) / 2 - slope_y * (height - 1) / 2
        if index == 0:
            layers.append(PlanarLayer(offset, slope_x, slope_y))
            continue
        layers.append(
            PlanarLayer(
                offset,
                slope_x,
                slope_y,
                shape=str(rng.choice(["rect", "ellipse"])),
                center=(rng.uniform(0.15, 0.85) * height, rng.uniform(0.15, 0.85) * width),
                half_size=(rng.uniform(0.1, 0.3) * height, rng.uniform(0.1, 0.3) * width),
            )
        )
    return layers


def generate_synthetic_pair(config: SyntheticDataConfig, seed: int, z_max: Optional[float] = None) -> SyntheticScene:
    """Deterministic scene for ``seed``; rejects disparity ranges beyond ``z_max``."""

    if z_max is not None and config.max_disparity > z_max:
        raise StereoInputError(f"max_disparity {config.max_disparity} exceeds z_max {z_max}")
    rng = np.random.default_rng(seed)
    layers = sample_layers(config, rng)
    texture_width = config.width + int(math.ceil(config.max_disparity)) + 2
    textures = [make_texture(rng, config.height, texture_width, config.texture) for _ in layers]
    scene = render_scene(layers, textures, config.height, config.width, seed=seed)
    logger.debug(f"Scene {seed}: {len(layers)} layers, {scene.valid.mean() * 100:.1f}% valid")
    return scene
