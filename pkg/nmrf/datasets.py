"""Training and evaluation samples from synthetic scenes or file lists."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .config import RunConfig, SyntheticDataConfig
from .cost_volume import COARSE_SCALE
from .disparity_io import load_segments, read_disparity, read_image
from .errors import ConfigError, StereoInputError
from .segmentation import segment_image
from .supervision import GroundTruthModals, superpixel_downsample
from .synthetic import SyntheticScene, generate_synthetic_pair

logger = logging.getLogger(__name__)

_SPLITS = {"train": 0, "eval": 1}


@dataclass
class StereoSample:
    """One pair with dense ground truth; ``modals`` is None when the size is not a multiple of 8."""

    name: str
    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray
    valid: np.ndarray
    modals: Optional[GroundTruthModals] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.disparity.shape


def aligned_crop_origin(
    size: Tuple[int, int], crop: Tuple[int, int], rng: np.random.Generator, align: int = COARSE_SCALE
) -> Tuple[int, int]:
    """Random top-left corner on the ``align`` grid for a ``crop`` inside ``size``."""

    (height, width), (ch, cw) = size, crop
    if ch > height or cw > width:
        raise StereoInputError(f"Crop {ch}x{cw} does not fit a {height}x{width} image")
    top = int(rng.integers(0, (height - ch) // align + 1)) * align
    left = int(rng.integers(0, (width - cw) // align + 1)) * align
    return top, left


def _crop_sample(sample: StereoSample, top: int, left: int, crop: Tuple[int, int]) -> StereoSample:
    rows, cols = slice(top, top + crop[0]), slice(left, left + crop[1])
    modals = None
    if sample.modals is not None:
        modals = sample.modals.crop(top // COARSE_SCALE, left // COARSE_SCALE, crop[0] // COARSE_SCALE, crop[1] // COARSE_SCALE)
    return StereoSample(
        name=sample.name,
        left=sample.left[rows, cols],
        right=sample.right[rows, cols],
        disparity=sample.disparity[rows, cols],
        valid=sample.valid[rows, cols],
        modals=modals,
    )


def compute_modals(
    image: np.ndarray, disparity: np.ndarray, valid: np.ndarray, region_size: int, segments: Optional[np.ndarray] = None
) -> Optional[GroundTruthModals]:
    height, width = disparity.shape
    if height % COARSE_SCALE or width % COARSE_SCALE:
        return None
    if segments is None:
        segments = segment_image(image, region_size)
    return superpixel_downsample(disparity, valid, segments)


class SyntheticStereoDataset:
    """Scenes generated from ``(data seed, split, index)``; modals are computed once per scene."""

    def __init__(self, config: SyntheticDataConfig, split: str = "train", z_max: Optional[float] = None) -> None:
        if split not in _SPLITS:
            raise ConfigError(f"Unknown split {split!r}")
        self.config = config
        self.split = split
        self.z_max = z_max
        self._cache: Dict[int, StereoSample] = {}

    def __len__(self) -> int:
        return self.config.num_scenes if self.split == "train" else self.config.eval_scenes

    def scene_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.config.seed, _SPLITS[self.split], index]).generate_state(1)[0])

    def scene(self, index: int) -> SyntheticScene:
        return generate_synthetic_pair(self.config, self.scene_seed(index), self.z_max)

    def __getitem__(self, index: int) -> StereoSample:
        if not 0 <= index < len(self):
            raise IndexError(index)
        if index not in self._cache:
            scene = self.scene(index)
            self._cache[index] = StereoSample(
                name=f"{self.split}_{index:04d}",
                left=scene.left,
                right=scene.right,
                disparity=scene.disparity,
                valid=scene.valid,
                modals=compute_modals(scene.left, scene.disparity, scene.valid, self.config.superpixel_size),
            )
        return self._cache[index]

    def sample(self, index: int, crop: Optional[Tuple[int, int]] = None, rng: Optional[np.random.Generator] = None) -> StereoSample:
        sample = self[index]
        if crop is None or tuple(crop) == sample.shape:
            return sample
        top, left = aligned_crop_origin(sample.shape, crop, rng or np.random.default_rng(0))
        return _crop_sample(sample, top, left, crop)


class FileListDataset:
    """Whitespace-separated ``left right disparity [segments]`` lines; relative paths resolve against the list."""

    def __init__(self, list_file: Union[str, Path], region_size: int = 8, z_max: Optional[float] = None) -> None:
        list_file = Path(list_file)
        if not list_file.is_file():
            raise ConfigError(f"File list not found: {list_file}")
        self.region_size = region_size
        self.z_max = z_max
        self.entries: List[Tuple[Path, ...]] = []
        for number, line in enumerate(list_file.read_text().splitlines(), start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) not in (3, 4):
                raise ConfigError(f"{list_file}:{number}: expected 3 or 4 paths, got {len(fields)}")
            self.entries.append(tuple(p if p.is_absolute() else list_file.parent / p for p in map(Path, fields)))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> StereoSample:
        return self.sample(index)

    def sample(self, index: int, crop: Optional[Tuple[int, int]] = None, rng: Optional[np.random.Generator] = None) -> StereoSample:
        entry = self.entries[index]
        left, right = read_image(entry[0]), read_image(entry[1])
        disparity, valid = read_disparity(entry[2])
        if left.shape != right.shape or left.shape[:2] != disparity.shape:
            raise StereoInputError(f"Size mismatch in entry {index}: {left.shape}, {right.shape}, {disparity.shape}")
        segments = load_segments(entry[3]) if len(entry) == 4 else None
        if self.z_max is not None:
            valid = valid & (disparity <= self.z_max)
        disparity = np.where(valid, disparity, 0.0).astype(np.float32)
        sample = StereoSample(name=entry[0].stem, left=left, right=right, disparity=disparity, valid=valid)
        if crop is not None:
            top, left_col = aligned_crop_origin(sample.shape, crop, rng or np.random.default_rng(0))
            sample = _crop_sample(sample, top, left_col, crop)
            if segments is not None:
                segments = segments[top : top + crop[0], left_col : left_col + crop[1]]
        sample.modals = compute_modals(sample.left, sample.disparity, sample.valid, self.region_size, segments)
        return sample


Dataset = Union[SyntheticStereoDataset, FileListDataset]


def build_dataset(config: RunConfig, split: str = "train") -> Dataset:
    data = config.data
    if data.source == "synthetic":
        return SyntheticStereoDataset(data.synthetic, split, z_max=config.model.z_max)
    list_file = data.train_list if split == "train" else data.eval_list
    if not list_file:
        raise ConfigError(f"data.{split}_list must be set for the filelist source")
    return FileListDataset(list_file, region_size=data.synthetic.superpixel_size, z_max=config.model.z_max)


def to_tensor_image(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()


def collate(samples: Sequence[StereoSample], device: Optional[torch.device] = None) -> Dict[str, torch.Tensor]:
    """Stack samples into tensors; modal fields are present only when every sample has them."""

    batch = {
        "left": torch.stack([to_tensor_image(s.left) for s in samples]),
        "right": torch.stack([to_tensor_image(s.right) for s in samples]),
        "disparity": torch.stack([torch.from_numpy(np.ascontiguousarray(s.disparity)).float() for s in samples]),
        "valid": torch.stack([torch.from_numpy(np.ascontiguousarray(s.valid)) for s in samples]),
    }
    if all(s.modals is not None for s in samples):
        batch["modals"] = torch.stack([torch.from_numpy(np.ascontiguousarray(s.modals.values)) for s in samples])
        batch["modal_valid"] = torch.stack([torch.from_numpy(np.ascontiguousarray(s.modals.valid)) for s in samples])
    if device is not None:
        batch = {key: value.to(device) for key, value in batch.items()}
    return batch
