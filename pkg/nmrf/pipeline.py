"""Run a trained model on an image pair stored on disk and write the results."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch

from .datasets import to_tensor_image
from .disparity_io import read_image, write_disparity
from .errors import StereoInputError
from .model import NMRFStereo
from .visualize import colorize_disparity, save_png

logger = logging.getLogger(__name__)

SUFFIXES = {"pfm": ".pfm", "kitti-png16": ".png"}


@dataclass
class InferenceResult:
    disparity_path: Path
    preview_path: Path
    disparity: np.ndarray
    timings: Dict[str, float] = field(default_factory=dict)


def predict_disparity(
    model: NMRFStereo, left: np.ndarray, right: np.ndarray, device: torch.device
) -> tuple[np.ndarray, Dict[str, float]]:
    if left.shape != right.shape:
        raise StereoInputError(f"Left/right size mismatch: {left.shape} vs {right.shape}")
    model.eval()
    with torch.no_grad():
        output = model(to_tensor_image(left).unsqueeze(0).to(device), to_tensor_image(right).unsqueeze(0).to(device))
    return output.disparity[0].cpu().numpy(), output.timings


def infer_pair(
    model: NMRFStereo,
    left_path: Union[str, Path],
    right_path: Union[str, Path],
    output_path: Union[str, Path],
    fmt: str = "pfm",
    device: Optional[torch.device] = None,
) -> InferenceResult:
    """Write the disparity map in ``fmt`` plus a colour preview next to it."""

    for path in (left_path, right_path):
        if not Path(path).is_file():
            raise StereoInputError(f"Image not found: {path}")
    if fmt not in SUFFIXES:
        raise StereoInputError(f"Unknown output format {fmt!r}; expected one of {sorted(SUFFIXES)}")
    device = device or next(model.parameters()).device
    disparity, timings = predict_disparity(model, read_image(left_path), read_image(right_path), device)

    output_path = Path(output_path)
    if output_path.suffix.lower() != SUFFIXES[fmt]:
        output_path = output_path.with_suffix(SUFFIXES[fmt])
    write_disparity(output_path, disparity, fmt)
    preview = save_png(
        output_path.with_name(f"{output_path.stem}_preview.png"),
        colorize_disparity(disparity, max_disparity=float(model.config.z_max)),
    )
    logger.info(f"Disparity written to {output_path} ({', '.join(f'{k} {v:.3f}s' for k, v in timings.items())})")
    return InferenceResult(disparity_path=output_path, preview_path=preview, disparity=disparity, timings=timings)
