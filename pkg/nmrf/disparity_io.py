"""Disparity and image file I/O: PFM (SceneFlow) and 16-bit PNG (KITTI)."""

from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

from .errors import DisparityFormatError, StereoInputError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FORMATS = ("pfm", "kitti-png16")
KITTI_SCALE = 256.0


def infer_format(path: PathLike) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return "pfm"
    if suffix == ".png":
        return "kitti-png16"
    raise DisparityFormatError(f"Cannot infer disparity format from {path}; use .pfm or .png")


def read_pfm(path: PathLike) -> np.ndarray:
    """Read a PFM file into top-down rows, honouring the byte order given by the scale sign."""

    try:
        with open(path, "rb") as handle:
            header = handle.readline().rstrip()
            dims = handle.readline().decode("ascii", errors="replace")
            scale_line = handle.readline().decode("ascii", errors="replace")
            payload = handle.read()
    except OSError as exc:
        raise DisparityFormatError(f"Cannot read {path}: {exc}") from exc

    if header == b"PF":
        channels = 3
    elif header == b"Pf":
        channels = 1
    else:
        raise DisparityFormatError(f"{path} is not a PFM file (header {header!r})")
    match = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
    if not match:
        raise DisparityFormatError(f"{path}: malformed PFM dimensions {dims.strip()!r}")
    width, height = int(match.group(1)), int(match.group(2))
    try:
        scale = float(scale_line.strip())
    except ValueError as exc:
        raise DisparityFormatError(f"{path}: malformed PFM scale {scale_line.strip()!r}") from exc
    if scale == 0:
        raise DisparityFormatError(f"{path}: PFM scale must be nonzero")

    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * channels
    if len(payload) < expected * 4:
        raise DisparityFormatError(f"{path}: expected {expected} floats, found {len(payload) // 4}")
    data = np.frombuffer(payload, dtype=dtype, count=expected)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path: PathLike, data: np.ndarray) -> None:
    """Write a little-endian PFM with bottom-up rows."""

    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise DisparityFormatError(f"PFM data must be HxW or HxWx3, got {data.shape}")
    height, width = data.shape[:2]
    with open(path, "wb") as handle:
        handle.write(header + b"\n")
        handle.write(f"{width} {height}\n".encode("ascii"))
        handle.write(b"-1.0\n")
        handle.write(np.flipud(data).astype("<f4").tobytes())


def read_png16(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """KITTI convention: disparity = stored / 256, stored 0 marks an invalid pixel."""

    try:
        with Image.open(path) as image:
            mode = image.mode
            stored = np.array(image)
    except OSError as exc:
        raise DisparityFormatError(f"Cannot read {path}: {exc}") from exc
    if mode not in ("I;16", "I;16B", "I;16L", "I") or stored.ndim != 2:
        raise DisparityFormatError(f"{path}: expected a single-channel 16-bit PNG, got mode {mode}")
    stored = stored.astype(np.int64)
    if stored.min(initial=0) < 0 or stored.max(initial=0) > 65535:
        raise DisparityFormatError(f"{path}: values outside the 16-bit range")
    return (stored / KITTI_SCALE).astype(np.float32), stored > 0


def write_png16(path: PathLike, disparity: np.ndarray, valid: Optional[np.ndarray] = None) -> None:
    disparity = np.asarray(disparity, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(disparity)
    stored = np.round(np.nan_to_num(disparity, nan=0.0) * KITTI_SCALE)
    stored = np.clip(stored, 0, 65535)
    # a valid zero disparity must not read back as invalid
    stored[valid & (stored == 0)] = 1
    stored[~valid] = 0
    Image.fromarray(stored.astype(np.uint16)).save(path)


def read_disparity(path: PathLike, fmt: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(disparity, valid)`` as float32 / bool arrays."""

    fmt = fmt or infer_format(path)
    if fmt == "pfm":
        disparity = read_pfm(path)
        if disparity.ndim != 2:
            raise DisparityFormatError(f"{path}: disparity PFM must have a single channel")
        return disparity, np.isfinite(disparity)
    if fmt == "kitti-png16":
        return read_png16(path)
    raise DisparityFormatError(f"Unknown disparity format {fmt!r}; expected one of {FORMATS}")


def write_disparity(
    path: PathLike, disparity: np.ndarray, fmt: Optional[str] = None, valid: Optional[np.ndarray] = None
) -> Path:
    path = Path(path)
    fmt = fmt or infer_format(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "pfm":
        data = np.asarray(disparity, dtype=np.float32).copy()
        if valid is not None:
            data[~valid] = np.inf
        write_pfm(path, data)
    elif fmt == "kitti-png16":
        write_png16(path, disparity, valid)
    else:
        raise DisparityFormatError(f"Unknown disparity format {fmt!r}; expected one of {FORMATS}")
    logger.debug(f"Wrote {fmt} disparity to {path}")
    return path


def read_image(path: PathLike) -> np.ndarray:
    """Load 8-bit, 16-bit or float images as ``[H, W, 3]`` float32 in [0, 1]."""

    try:
        with Image.open(path) as image:
            mode = image.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                data = np.array(image).astype(np.float32) / 65535.0
            elif mode == "F":
                data = np.array(image).astype(np.float32)
            else:
                data = np.array(image.convert("RGB")).astype(np.float32) / 255.0
    except OSError as exc:
        raise StereoInputError(f"Cannot read image {path}: {exc}") from exc
    if data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=2)
    return data


def load_segments(path: PathLike) -> np.ndarray:
    """Precomputed superpixel labels stored as a single-channel integer image or ``.npy`` array."""

    path = Path(path)
    try:
        if path.suffix == ".npy":
            labels = np.load(path)
        else:
            with Image.open(path) as image:
                labels = np.array(image)
    except (OSError, ValueError) as exc:
        raise StereoInputError(f"Cannot read segment labels {path}: {exc}") from exc
    if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
        raise StereoInputError(f"{path}: segment labels must be a single-channel integer map")
    return labels.astype(np.int64)
