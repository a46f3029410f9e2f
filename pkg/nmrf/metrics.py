"""Disparity and proposal-quality metrics over valid pixels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from .cost_volume import COARSE_SCALE

EVAL_SCHEMA_ID = "nmrf-eval/1"
BAD_THRESHOLDS = (1.0, 2.0, 3.0)
RECALL_THRESHOLDS = (3.0, 8.0, 16.0)
SEED_RECALL_THRESHOLDS = (8.0, 16.0)


class MetricsReport(BaseModel):
    """Percentages are in [0, 100]; every value is None when no pixel was valid."""

    defined: bool
    valid_pixels: int = 0
    epe: Optional[float] = None
    bad_1: Optional[float] = None
    bad_2: Optional[float] = None
    bad_3: Optional[float] = None
    d1: Optional[float] = None
    recall_3: Optional[float] = None
    recall_8: Optional[float] = None
    recall_16: Optional[float] = None
    proposal_epe: Optional[float] = None
    seed_recall_8: Optional[float] = None
    seed_recall_16: Optional[float] = None


class SampleReport(BaseModel):
    name: str
    metrics: MetricsReport


class EvalReport(BaseModel):
    schema_id: str = EVAL_SCHEMA_ID
    overall: MetricsReport
    samples: List[SampleReport] = Field(default_factory=list)

    def table(self) -> str:
        columns = ["epe", "bad_1", "bad_2", "bad_3", "d1", "recall_3", "recall_8", "recall_16", "proposal_epe"]
        header = f"{'sample':<16}" + "".join(f"{c:>14}" for c in columns)
        rows = [header, "-" * len(header)]
        entries = [(s.name, s.metrics) for s in self.samples] + [("overall", self.overall)]
        for name, metrics in entries:
            values = metrics.model_dump()
            cells = "".join(f"{'n/a':>14}" if values[c] is None else f"{values[c]:>14.3f}" for c in columns)
            rows.append(f"{name:<16}{cells}")
        return "\n".join(rows)


def upsample_candidates(candidates: np.ndarray, shape: tuple, factor: int = COARSE_SCALE) -> np.ndarray:
    """Nearest upsampling of coarse labels ``[h, w, k]`` to ``[H, W, k]``, cropped to ``shape``."""

    full = np.repeat(np.repeat(candidates, factor, axis=0), factor, axis=1)
    return full[: shape[0], : shape[1]]


class MetricsAccumulator:
    """Pixel-weighted accumulation of metrics across samples."""

    def __init__(self) -> None:
        self.pixels = 0
        self.count = 0
        self.sums: Dict[str, float] = {}
        self.proposal_count = 0
        self.seed_count = 0

    def _add(self, key: str, value: float) -> None:
        self.sums[key] = self.sums.get(key, 0.0) + value

    def add(
        self,
        pred: Optional[np.ndarray],
        gt: np.ndarray,
        mask: np.ndarray,
        candidates: Optional[np.ndarray] = None,
        seeds: Optional[np.ndarray] = None,
    ) -> None:
        """Accumulate one map; ``pred`` may be None to score only candidates and seeds."""

        if mask.shape != gt.shape or (pred is not None and pred.shape != gt.shape):
            found = None if pred is None else pred.shape
            raise ValueError(f"shape mismatch: pred {found}, gt {gt.shape}, mask {mask.shape}")
        mask = mask.astype(bool) & np.isfinite(gt)
        n = int(mask.sum())
        if n == 0:
            return
        target = gt[mask].astype(np.float64)
        self.pixels += n
        if pred is not None:
            error = np.abs(pred[mask].astype(np.float64) - target)
            self.count += n
            self._add("epe", error.sum())
            for threshold in BAD_THRESHOLDS:
                self._add(f"bad_{int(threshold)}", (error > threshold).sum())
            self._add("d1", ((error > 3.0) & (error > 0.05 * np.abs(target))).sum())

        if candidates is not None:
            best = self._best_distance(candidates, gt.shape, mask, target)
            self.proposal_count += n
            self._add("proposal_epe", best.sum())
            for threshold in RECALL_THRESHOLDS:
                self._add(f"recall_{int(threshold)}", (best <= threshold).sum())
        if seeds is not None:
            best = self._best_distance(seeds, gt.shape, mask, target)
            self.seed_count += n
            for threshold in SEED_RECALL_THRESHOLDS:
                self._add(f"seed_recall_{int(threshold)}", (best <= threshold).sum())

    @staticmethod
    def _best_distance(labels: np.ndarray, shape: tuple, mask: np.ndarray, target: np.ndarray) -> np.ndarray:
        if labels.shape[:2] != shape:
            labels = upsample_candidates(labels, shape)
        return np.abs(labels[mask].astype(np.float64) - target[:, None]).min(axis=-1)

    def report(self) -> MetricsReport:
        if self.pixels == 0:
            return MetricsReport(defined=False)
        values: Dict[str, float] = {}
        if self.count:
            values["epe"] = self.sums["epe"] / self.count
            for key in ("bad_1", "bad_2", "bad_3", "d1"):
                values[key] = 100.0 * self.sums[key] / self.count
        if self.proposal_count:
            values["proposal_epe"] = self.sums["proposal_epe"] / self.proposal_count
            for threshold in RECALL_THRESHOLDS:
                key = f"recall_{int(threshold)}"
                values[key] = 100.0 * self.sums[key] / self.proposal_count
        if self.seed_count:
            for threshold in SEED_RECALL_THRESHOLDS:
                key = f"seed_recall_{int(threshold)}"
                values[key] = 100.0 * self.sums[key] / self.seed_count
        return MetricsReport(defined=True, valid_pixels=self.pixels, **values)


def compute_metrics(
    pred: Optional[np.ndarray],
    gt: np.ndarray,
    mask: np.ndarray,
    candidates: Optional[np.ndarray] = None,
    seeds: Optional[np.ndarray] = None,
) -> MetricsReport:
    """Metrics of one map. ``candidates``/``seeds`` may be coarse ``[h, w, k]`` or full-resolution."""

    accumulator = MetricsAccumulator()
    accumulator.add(pred, gt, mask, candidates, seeds)
    return accumulator.report()


@dataclass
class Prediction:
    """Full-resolution disparity plus optional coarse candidate and seed labels in full-resolution pixels."""

    disparity: Optional[np.ndarray]
    candidates: Optional[np.ndarray] = None
    seeds: Optional[np.ndarray] = None


def evaluate(predict_fn: Callable[..., Prediction], samples: Iterable) -> EvalReport:
    """Run ``predict_fn(sample)`` over samples exposing ``name``, ``disparity`` and ``valid``."""

    overall = MetricsAccumulator()
    reports = []
    for sample in samples:
        prediction = predict_fn(sample)
        single = MetricsAccumulator()
        for accumulator in (single, overall):
            accumulator.add(prediction.disparity, sample.disparity, sample.valid, prediction.candidates, prediction.seeds)
        reports.append(SampleReport(name=sample.name, metrics=single.report()))
    return EvalReport(overall=overall.report(), samples=reports)
