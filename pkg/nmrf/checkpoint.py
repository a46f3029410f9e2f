"""Single-file checkpoints carrying weights, the resolved config and its hash."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import torch

from .config import RunConfig, config_hash, validate_config
from .errors import CheckpointError, ConfigError
from .model import NMRFStereo

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "nmrf-checkpoint/1"


@dataclass
class Checkpoint:
    config: RunConfig
    model_state: Dict[str, torch.Tensor]
    step: int = 0
    optimizer_state: Optional[Dict[str, Any]] = None
    scheduler_state: Optional[Dict[str, Any]] = None
    rng_state: Optional[torch.Tensor] = None


def save_checkpoint(
    path: Union[str, Path],
    model: NMRFStereo,
    config: RunConfig,
    step: int = 0,
    optimizer: Optional[torch.optim.Optimizer] = None,
    scheduler: Optional[Any] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config.model),
        "model": model.state_dict(),
        "step": step,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "rng": torch.get_rng_state(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.info(f"Checkpoint saved to {path} (step {step})")
    return path


def load_checkpoint(
    path: Union[str, Path], expected: Optional[RunConfig] = None, map_location: Union[str, torch.device] = "cpu"
) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        found = payload.get("format") if isinstance(payload, dict) else type(payload).__name__
        raise CheckpointError(f"{path}: unsupported checkpoint format {found!r}, expected {CHECKPOINT_FORMAT!r}")
    try:
        config = validate_config(payload["config"])
    except ConfigError as exc:
        raise CheckpointError(f"{path}: stored config is invalid: {exc}") from exc
    stored_hash = payload.get("config_hash")
    if stored_hash != config_hash(config.model):
        raise CheckpointError(f"{path}: config hash does not match the stored model config")
    if expected is not None and config_hash(expected.model) != stored_hash:
        raise CheckpointError(f"{path}: model config differs from the requested one (hash {stored_hash[:12]})")
    return Checkpoint(
        config=config,
        model_state=payload["model"],
        step=int(payload.get("step", 0)),
        optimizer_state=payload.get("optimizer"),
        scheduler_state=payload.get("scheduler"),
        rng_state=payload.get("rng"),
    )


def load_model(
    path: Union[str, Path], device: Union[str, torch.device] = "cpu"
) -> Tuple[NMRFStereo, RunConfig]:
    checkpoint = load_checkpoint(path)
    model = NMRFStereo(checkpoint.config.model)
    try:
        model.load_state_dict(checkpoint.model_state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not fit the stored config: {exc}") from exc
    model.to(device).eval()
    return model, checkpoint.config
