"""Colour-coded previews of disparity and error maps."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import matplotlib
import numpy as np
from PIL import Image

matplotlib.use("Agg")

ERROR_CAP = 3.0


def _apply_colormap(values: np.ndarray, name: str) -> np.ndarray:
    cmap = matplotlib.colormaps[name]
    return (cmap(np.clip(values, 0.0, 1.0))[..., :3] * 255).astype(np.uint8)


def colorize_disparity(
    disparity: np.ndarray, valid: Optional[np.ndarray] = None, max_disparity: Optional[float] = None
) -> np.ndarray:
    disparity = np.asarray(disparity, dtype=np.float32)
    valid = np.isfinite(disparity) if valid is None else valid & np.isfinite(disparity)
    if max_disparity is None:
        max_disparity = float(disparity[valid].max()) if valid.any() else 1.0
    rgb = _apply_colormap(np.nan_to_num(disparity) / max(max_disparity, 1e-6), "magma")
    rgb[~valid] = 0
    return rgb


def colorize_error(error: np.ndarray, valid: Optional[np.ndarray] = None, cap: float = ERROR_CAP) -> np.ndarray:
    """Absolute error mapped green (0) to red (``cap`` px and above); invalid pixels black."""

    error = np.abs(np.asarray(error, dtype=np.float32))
    valid = np.isfinite(error) if valid is None else valid & np.isfinite(error)
    rgb = _apply_colormap(np.nan_to_num(error) / cap, "RdYlGn_r")
    rgb[~valid] = 0
    return rgb


def save_png(path: Union[str, Path], rgb: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(path)
    return path
