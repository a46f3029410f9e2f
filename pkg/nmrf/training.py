"""Loss composition, the training loop and model evaluation."""

from __future__ import annotations

import json
import logging
import os
import random
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Union

import numpy as np
import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import OneCycleLR

from .checkpoint import load_checkpoint, save_checkpoint
from .config import LossWeights, RunConfig
from .cost_volume import CostVolume
from .datasets import Dataset, StereoSample, collate, to_tensor_image
from .errors import CheckpointError, StereoInputError, TrainingDivergedError
from .metrics import EvalReport, Prediction, evaluate
from .model import NMRFStereo, StereoOutput
from .supervision import LossBreakdown, disparity_loss, init_loss, online_gt_nms, proposal_loss, total_loss

logger = logging.getLogger(__name__)


def resolve_device(name: str = "auto") -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def set_determinism(seed: int, deterministic: bool = False) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.backends.cudnn.benchmark = False
        torch.use_deterministic_algorithms(True, warn_only=True)
    else:
        # scatter_add and cudnn autotuning are the nondeterministic pieces on GPU
        torch.use_deterministic_algorithms(False)


def compute_losses(
    output: StereoOutput, batch: Dict[str, torch.Tensor], weights: LossWeights, z_max: float
) -> LossBreakdown:
    """All training losses for one batch; the batch must carry modals (sizes divisible by 8)."""

    if "modals" not in batch:
        raise StereoInputError("Training batches need ground-truth modals; use crops that are multiples of 8")
    modals, modal_valid = batch["modals"], batch["modal_valid"]
    h, w = modals.shape[1:3]

    candidates = output.candidates.disparity[:, :h, :w]
    volume = CostVolume(output.volume.values[:, :h, :w], output.volume.valid[:, :h, :w], output.volume.z_max)
    nms_modals, nms_valid = online_gt_nms(modals.to(candidates.dtype), modal_valid, candidates)

    gt, valid = batch["disparity"], batch["valid"]
    refined = output.disparity.unsqueeze(1)
    return total_loss(
        init=init_loss(volume, modals, modal_valid),
        prop=proposal_loss(nms_modals, nms_valid, candidates),
        disp_coarse=disparity_loss(output.coarse.hypotheses, output.coarse.probabilities, gt, valid, z_max),
        disp_refine=disparity_loss(refined, torch.ones_like(refined), gt, valid, z_max),
        weights=weights,
    )


class Trainer:
    """AdamW with a one-cycle schedule; batch composition is a pure function of ``(seed, step)``."""

    def __init__(
        self,
        config: RunConfig,
        run_dir: Union[str, Path],
        dataset: Dataset,
        device: Optional[torch.device] = None,
    ) -> None:
        self.config = config
        self.run_dir = Path(run_dir)
        self.dataset = dataset
        self.device = device or resolve_device(config.train.device)
        if len(dataset) == 0:
            raise StereoInputError("Training dataset is empty")

        train = config.train
        set_determinism(train.seed, train.deterministic)
        self.model = NMRFStereo(config.model).to(self.device)
        self.optimizer = AdamW(self.model.parameters(), lr=train.max_lr, weight_decay=train.weight_decay)
        self.scheduler: Optional[OneCycleLR] = None
        if train.steps > 0:
            self.scheduler = OneCycleLR(
                self.optimizer,
                max_lr=train.max_lr,
                total_steps=train.steps,
                pct_start=train.pct_start,
                anneal_strategy="linear",
            )
        self.step = 0

    @property
    def checkpoint_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    def resume(self, path: Union[str, Path]) -> None:
        checkpoint = load_checkpoint(path, expected=self.config, map_location=self.device)
        self.model.load_state_dict(checkpoint.model_state)
        if checkpoint.optimizer_state is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer_state)
        if self.scheduler is not None and checkpoint.scheduler_state is not None:
            self.scheduler.load_state_dict(checkpoint.scheduler_state)
        if checkpoint.rng_state is not None:
            torch.set_rng_state(checkpoint.rng_state.cpu())
        if checkpoint.step > self.config.train.steps:
            raise CheckpointError(f"Checkpoint step {checkpoint.step} is beyond the configured {self.config.train.steps}")
        self.step = checkpoint.step
        logger.info(f"Resumed from {path} at step {self.step}")

    def batch_for_step(self, step: int) -> Dict[str, torch.Tensor]:
        train = self.config.train
        rng = np.random.default_rng([train.seed, step])
        indices = rng.integers(0, len(self.dataset), size=train.batch_size)
        samples = [
            self.dataset.sample(int(index), crop=train.crop, rng=np.random.default_rng([train.seed, step, slot]))
            for slot, index in enumerate(indices)
        ]
        return collate(samples, self.device)

    def _dump_diagnostics(self, batch: Dict[str, torch.Tensor], losses: LossBreakdown) -> Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        path = self.run_dir / "nan_diagnostics.json"
        nonfinite = [name for name, p in self.model.named_parameters() if not torch.isfinite(p).all()]
        diagnostics = {
            "step": self.step,
            "losses": losses.as_dict(),
            "lr": self.optimizer.param_groups[0]["lr"],
            "nonfinite_parameters": nonfinite,
            "left_mean": float(batch["left"].mean()),
            "right_mean": float(batch["right"].mean()),
            "valid_fraction": float(batch["valid"].float().mean()),
        }
        path.write_text(json.dumps(diagnostics, indent=2))
        return path

    def train_step(self, batch: Dict[str, torch.Tensor]) -> Dict[str, float]:
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        output = self.model(batch["left"], batch["right"])
        losses = compute_losses(output, batch, self.config.loss, self.config.model.z_max)
        if not torch.isfinite(losses.total):
            path = self._dump_diagnostics(batch, losses)
            raise TrainingDivergedError(f"Non-finite loss at step {self.step}; diagnostics in {path}", path)
        losses.total.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.train.grad_clip)
        lr = self.optimizer.param_groups[0]["lr"]
        self.optimizer.step()
        if self.scheduler is not None:
            self.scheduler.step()
        return {**losses.as_dict(), "grad_norm": float(grad_norm), "lr": lr}

    def save(self, name: str) -> Path:
        return save_checkpoint(
            self.checkpoint_dir / name, self.model, self.config, self.step, self.optimizer, self.scheduler
        )

    def fit(self) -> Path:
        train = self.config.train
        self.run_dir.mkdir(parents=True, exist_ok=True)
        log_path = self.run_dir / "metrics.jsonl"
        logger.info(f"Training for {train.steps} steps on {self.device} (starting at {self.step})")
        with open(log_path, "a") as log:
            while self.step < train.steps:
                record = self.train_step(self.batch_for_step(self.step))
                self.step += 1
                log.write(json.dumps({"step": self.step, **record}) + "\n")
                log.flush()
                if self.step % train.log_every == 0:
                    logger.info(
                        f"step {self.step}/{train.steps} total={record['total']:.4f} init={record['init']:.4f} "
                        f"prop={record['prop']:.4f} disp={record['disp_coarse']:.4f}+{record['disp_refine']:.4f}"
                    )
                if self.step % train.checkpoint_every == 0:
                    self.save(f"step_{self.step:07d}.pt")
        return self.save("final.pt")


def model_predictor(model: NMRFStereo, device: torch.device) -> Callable[[StereoSample], Prediction]:
    model.eval()

    def predict(sample: StereoSample) -> Prediction:
        with torch.no_grad():
            left = to_tensor_image(sample.left).unsqueeze(0).to(device)
            right = to_tensor_image(sample.right).unsqueeze(0).to(device)
            output = model(left, right)
        return Prediction(
            disparity=output.disparity[0].cpu().numpy(),
            candidates=output.candidates.disparity[0].cpu().numpy(),
            seeds=output.seeds.disparity[0].cpu().numpy(),
        )

    return predict


def evaluate_model(model: NMRFStereo, samples: Iterable[StereoSample], device: torch.device) -> EvalReport:
    return evaluate(model_predictor(model, device), samples)
