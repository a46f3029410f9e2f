"""Superpixel segmentation used to group ground-truth disparities into modals."""

from __future__ import annotations

import numpy as np
from skimage.segmentation import slic

from .errors import StereoInputError


def segment_image(image: np.ndarray, region_size: int = 8, compactness: float = 10.0) -> np.ndarray:
    """SLIC superpixels of roughly ``region_size x region_size`` pixels, labels from 0."""

    if image.ndim != 3 or image.shape[2] != 3:
        raise StereoInputError(f"Expected an HxWx3 image, got {image.shape}")
    if region_size < 1:
        raise StereoInputError(f"region_size must be positive, got {region_size}")
    height, width = image.shape[:2]
    n_segments = max(1, (height * width) // (region_size * region_size))
    labels = slic(
        image.astype(np.float64),
        n_segments=n_segments,
        compactness=compactness,
        start_label=0,
        channel_axis=-1,
    )
    return labels.astype(np.int64)
