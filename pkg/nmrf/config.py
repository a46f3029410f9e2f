"""Declarative run configuration.

Config files are JSON objects. A top-level ``"include"`` list names other config
files (relative paths or built-in preset names) merged underneath the file's own
keys. ``--set section.key=value`` overrides from the command line are applied
last.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_ID = "nmrf-run/1"
PRESET_DIR = Path(__file__).resolve().parent / "configs"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Section):
    k: int = Field(4, ge=1, description="candidate labels per coarse pixel")
    window: int = Field(6, ge=2, description="MRF inference window side")
    refine_window: int = Field(4, ge=2)
    num_proposal_layers: int = Field(5, ge=1, description="proposal network layers")
    num_inference_layers: int = Field(10, ge=1, description="MRF inference layers")
    num_refine_layers: int = Field(5, ge=1, description="refinement layers")
    embed_dim: int = 128
    feature_channels: int = 256
    backbone_channels: Tuple[int, int, int] = (64, 96, 128)
    num_heads: int = 4
    num_groups: int = 8
    z_max: int = 192
    lookup_radius: int = 4
    pe_dim: int = 32
    adaptive_bias: bool = True
    position_aggregation: bool = True
    self_edges: Literal["on", "off", "shared"] = "on"
    dpn_attention: Literal["cross", "local"] = "cross"
    dpn_local_window: int = 8
    dpn_mask_same_pixel: bool = False

    @model_validator(mode="after")
    def _check_divisibility(self) -> "ModelConfig":
        if self.window % 2:
            raise ValueError(f"window must be even, got {self.window}")
        if self.z_max <= 0 or self.z_max % 8:
            raise ValueError(f"z_max must be a positive multiple of 8, got {self.z_max}")
        if self.feature_channels % self.num_groups:
            raise ValueError("feature_channels must be divisible by num_groups")
        if self.embed_dim % self.num_heads or self.num_heads % 2:
            raise ValueError("embed_dim must split evenly into an even number of heads")
        if self.k > self.z_max // 8 + 1:
            raise ValueError("k exceeds the number of coarse disparity shifts")
        return self


class TrainConfig(_Section):
    steps: int = Field(300_000, ge=0)
    batch_size: int = Field(8, ge=1)
    crop: Tuple[int, int] = (384, 768)
    max_lr: float = 5e-4
    weight_decay: float = 1e-5
    pct_start: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    deterministic: bool = False
    checkpoint_every: int = 5000
    log_every: int = 100
    device: str = "auto"

    @field_validator("crop")
    @classmethod
    def _crop_multiple_of_eight(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] % 8 or value[1] % 8 or min(value) < 32:
            raise ValueError(f"crop must be multiples of 8 and at least 32, got {value}")
        return value


class SyntheticDataConfig(_Section):
    height: int = 128
    width: int = 256
    min_layers: int = 2
    max_layers: int = 5
    texture: Literal["dots", "gradient"] = "dots"
    min_disparity: float = 2.0
    max_disparity: float = 64.0
    slanted: bool = True
    num_scenes: int = 20
    eval_scenes: int = 4
    seed: int = 0
    superpixel_size: int = 8

    @model_validator(mode="after")
    def _check_ranges(self) -> "SyntheticDataConfig":
        if not 1 <= self.min_layers <= self.max_layers:
            raise ValueError(f"need 1 <= min_layers <= max_layers, got {self.min_layers}..{self.max_layers}")
        if not 0 <= self.min_disparity <= self.max_disparity:
            raise ValueError(f"need 0 <= min_disparity <= max_disparity, got {self.min_disparity}..{self.max_disparity}")
        if self.height % 8 or self.width % 8:
            raise ValueError(f"scene size must be a multiple of 8, got {self.height}x{self.width}")
        return self


class DataConfig(_Section):
    source: Literal["synthetic", "filelist"] = "synthetic"
    synthetic: SyntheticDataConfig = Field(default_factory=SyntheticDataConfig)
    train_list: Optional[str] = None
    eval_list: Optional[str] = None


class LossWeights(_Section):
    init: float = 1.0
    prop: float = 1.0
    disp: float = 1.0


class RunConfig(_Section):
    schema_id: Literal["nmrf-run/1"] = SCHEMA_ID
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    loss: LossWeights = Field(default_factory=LossWeights)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _resolve_include(name: str, relative_to: Optional[Path]) -> Path:
    candidates = []
    if relative_to is not None:
        candidates.append(relative_to / name)
    candidates.append(Path(name))
    candidates.append(PRESET_DIR / (name if name.endswith(".json") else f"{name}.json"))
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise ConfigError(f"Cannot resolve config include {name!r}")


def load_config_tree(path: Path, _seen: Optional[List[Path]] = None) -> Dict[str, Any]:
    """Read a config file and recursively merge its includes."""

    path = path.resolve()
    seen = list(_seen or [])
    if path in seen:
        raise ConfigError(f"Circular config include: {' -> '.join(str(p) for p in seen + [path])}")
    seen.append(path)
    try:
        tree = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Failed to read config {path}: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"Config {path} must be a JSON object")

    merged: Dict[str, Any] = {}
    for name in tree.pop("include", []):
        merged = deep_merge(merged, load_config_tree(_resolve_include(name, path.parent), seen))
    return deep_merge(merged, tree)


def parse_override(expression: str) -> Dict[str, Any]:
    """Turn ``model.k=2`` into ``{"model": {"k": 2}}``."""

    if "=" not in expression:
        raise ConfigError(f"Override must look like section.key=value, got {expression!r}")
    dotted, raw = expression.split("=", 1)
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: Dict[str, Any] = {}
    cursor = node
    keys = dotted.strip().split(".")
    for key in keys[:-1]:
        cursor[key] = {}
        cursor = cursor[key]
    cursor[keys[-1]] = value
    return node


def resolve_config(
    config_path: Optional[Path] = None,
    preset: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> RunConfig:
    tree: Dict[str, Any] = {}
    if preset:
        tree = load_config_tree(_resolve_include(preset, None))
    if config_path is not None:
        tree = deep_merge(tree, load_config_tree(Path(config_path)))
    for expression in overrides:
        tree = deep_merge(tree, parse_override(expression))
    return validate_config(tree)


def validate_config(tree: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc


def config_hash(model: ModelConfig) -> str:
    canonical = json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_resolved_config(config: RunConfig, run_dir: Path) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "config.json"
    path.write_text(config.model_dump_json(indent=2))
    logger.info(f"Resolved config written to {path}")
    return path
