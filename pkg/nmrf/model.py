"""End-to-end stereo pipeline: features, proposal, MRF inference, refinement."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator

import torch
import torch.nn as nn

from .config import ModelConfig
from .cost_volume import CostVolume, LabelSeeds, build_cost_volume
from .feature_extractor import FeatureExtractor, FeaturePyramid, PaddingRecord
from .mrf import DisparityField, NeuralMRF
from .proposal import CandidateLabelSet, ProposalNetwork
from .refinement import RefinementNetwork

logger = logging.getLogger(__name__)

STAGES = ("features", "proposal", "inference", "refinement")


@dataclass
class ProposalOutput:
    pyramid: FeaturePyramid
    volume: CostVolume
    seeds: LabelSeeds
    candidates: CandidateLabelSet
    timings: Dict[str, float] = field(default_factory=dict)


@dataclass
class StereoOutput:
    """Every intermediate of one forward pass; full-resolution maps are cropped to the input size."""

    volume: CostVolume
    seeds: LabelSeeds
    candidates: CandidateLabelSet
    coarse: DisparityField
    disparity: torch.Tensor
    padding: PaddingRecord
    timings: Dict[str, float] = field(default_factory=dict)


@contextmanager
def _stage_timer(timings: Dict[str, float], stage: str, device: torch.device) -> Iterator[None]:
    start = time.perf_counter()
    yield
    if device.type == "cuda":
        torch.cuda.synchronize(device)
    timings[stage] = time.perf_counter() - start


class NMRFStereo(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.features = FeatureExtractor(config.backbone_channels, config.feature_channels)
        self.proposal = ProposalNetwork(config)
        self.inference = NeuralMRF(config)
        self.refinement = RefinementNetwork(config)

    def propose(self, left: torch.Tensor, right: torch.Tensor) -> ProposalOutput:
        timings: Dict[str, float] = {}
        with _stage_timer(timings, "features", left.device):
            pyramid = self.features(left, right)
        with _stage_timer(timings, "proposal", left.device):
            volume = build_cost_volume(pyramid.coarse_left, pyramid.coarse_right, self.config.z_max)
            seeds, candidates = self.proposal(volume)
        return ProposalOutput(pyramid, volume, seeds, candidates, timings)

    def forward(self, left: torch.Tensor, right: torch.Tensor) -> StereoOutput:
        proposed = self.propose(left, right)
        timings = dict(proposed.timings)
        padding = proposed.pyramid.padding
        with _stage_timer(timings, "inference", left.device):
            _, coarse = self.inference(proposed.pyramid, proposed.candidates)
        with _stage_timer(timings, "refinement", left.device):
            refined = self.refinement(coarse.disparity, proposed.pyramid)
        logger.debug("Stage timings: " + ", ".join(f"{k}={v:.3f}s" for k, v in timings.items()))
        return StereoOutput(
            volume=proposed.volume,
            seeds=proposed.seeds,
            candidates=proposed.candidates,
            coarse=coarse.crop(padding),
            disparity=padding.crop(refined),
            padding=padding,
            timings=timings,
        )
