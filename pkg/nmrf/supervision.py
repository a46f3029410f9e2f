"""Ground-truth modals, online suppression, proposal matching and the training losses.

Modals and proposals are compared in full-resolution pixels; the cost-volume
loss works in coarse units (``z / 8``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .config import LossWeights
from .cost_volume import COARSE_SCALE, CostVolume
from .errors import StereoInputError

MAX_MODALS = 4
MODAL_WEIGHTS = (0.5, 0.3, 0.1, 0.1)
MERGE_THRESHOLD = 0.5
NMS_THRESHOLD = 8.0
UNMATCHED_PENALTY = 1.0e6


@dataclass
class GroundTruthModals:
    """Per coarse pixel up to four modal disparities ``[h, w, 4]``, ordered by segment size.

    Null slots hold 0 in ``values``, False in ``valid`` and 0 in ``counts``.
    """

    values: np.ndarray
    valid: np.ndarray
    counts: np.ndarray

    def crop(self, top: int, left: int, height: int, width: int) -> "GroundTruthModals":
        rows, cols = slice(top, top + height), slice(left, left + width)
        return GroundTruthModals(self.values[rows, cols], self.valid[rows, cols], self.counts[rows, cols])


def _merge_segments(groups: List[np.ndarray], threshold: float) -> List[np.ndarray]:
    """Merge segments whose medians are closer than ``threshold`` into the larger one until none are."""

    groups = sorted(groups, key=len, reverse=True)
    while True:
        medians = [float(np.median(g)) for g in groups]
        pair = next(
            ((a, b) for b in range(len(groups)) for a in range(b) if abs(medians[a] - medians[b]) < threshold),
            None,
        )
        if pair is None:
            return groups
        keep, drop = pair
        groups[keep] = np.concatenate([groups[keep], groups.pop(drop)])
        groups = sorted(groups, key=len, reverse=True)


def superpixel_downsample(
    disparity: np.ndarray,
    valid: np.ndarray,
    segments: np.ndarray,
    factor: int = COARSE_SCALE,
    max_modals: int = MAX_MODALS,
    merge_threshold: float = MERGE_THRESHOLD,
) -> GroundTruthModals:
    """Reduce every ``factor x factor`` window of a dense map to up to ``max_modals`` modal disparities."""

    height, width = disparity.shape
    if segments.shape != disparity.shape or valid.shape != disparity.shape:
        raise StereoInputError(
            f"Disparity {disparity.shape}, mask {valid.shape} and segments {segments.shape} must share a shape"
        )
    if height % factor or width % factor:
        raise StereoInputError(f"Map size {height}x{width} is not a multiple of {factor}")

    h, w = height // factor, width // factor
    values = np.zeros((h, w, max_modals), dtype=np.float32)
    counts = np.zeros((h, w, max_modals), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            block = (slice(i * factor, (i + 1) * factor), slice(j * factor, (j + 1) * factor))
            mask = valid[block]
            if not mask.any():
                continue
            labels = segments[block][mask]
            disp = disparity[block][mask].astype(np.float64)
            ids, sizes = np.unique(labels, return_counts=True)
            order = np.argsort(-sizes, kind="stable")
            groups = _merge_segments([disp[labels == ids[o]] for o in order], merge_threshold)
            for slot, group in enumerate(groups[:max_modals]):
                values[i, j, slot] = np.median(group)
                counts[i, j, slot] = len(group)
    return GroundTruthModals(values=values, valid=counts > 0, counts=counts)


def online_gt_nms(
    modals: torch.Tensor,
    valid: torch.Tensor,
    proposals: torch.Tensor,
    threshold: float = NMS_THRESHOLD,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Order modals by distance to the nearest proposal and drop those within ``threshold`` of a kept one.

    Survivors are compacted to the front; null slots hold 0.
    """

    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    proposals = proposals.detach()
    proximity = (modals.unsqueeze(-1) - proposals.unsqueeze(-2)).abs().amin(dim=-1)
    proximity = proximity.masked_fill(~valid, float("inf"))
    order = torch.sort(proximity, dim=-1, stable=True).indices
    ranked = torch.gather(modals, -1, order)
    ranked_valid = torch.gather(valid, -1, order)

    keep = torch.zeros_like(ranked_valid)
    for i in range(ranked.shape[-1]):
        survives = ranked_valid[..., i].clone()
        for j in range(i):
            close = (ranked[..., i] - ranked[..., j]).abs() < threshold
            survives &= ~(keep[..., j] & close)
        keep[..., i] = survives

    compact = torch.sort((~keep).to(torch.uint8), dim=-1, stable=True).indices
    kept = torch.gather(keep, -1, compact)
    values = torch.gather(ranked, -1, compact).masked_fill(~kept, 0.0)
    return values, kept


@dataclass
class MatchAssignment:
    """Pairs ``(modal index, proposal index)`` and their total absolute cost."""

    pairs: List[Tuple[int, int]]
    cost: float


def hungarian_match(modals: Sequence[float], proposals: Sequence[float]) -> MatchAssignment:
    cost = np.abs(np.asarray(modals, dtype=np.float64)[:, None] - np.asarray(proposals, dtype=np.float64)[None, :])
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    return MatchAssignment(pairs=pairs, cost=float(cost[rows, cols].sum()))


def exhaustive_match(modals: Sequence[float], proposals: Sequence[float]) -> MatchAssignment:
    best: Optional[MatchAssignment] = None
    for chosen in itertools.permutations(range(len(proposals)), len(modals)):
        cost = sum(abs(float(m) - float(proposals[p])) for m, p in zip(modals, chosen))
        if best is None or cost < best.cost:
            best = MatchAssignment(pairs=list(enumerate(chosen)), cost=cost)
    if best is None:
        raise StereoInputError(f"Cannot match {len(modals)} modals to {len(proposals)} proposals")
    return best


def match_proposals(
    modals: Sequence[float], proposals: Sequence[float], method: str = "hungarian"
) -> MatchAssignment:
    """Minimum-cost injective matching of modals onto proposals under ``|z* - z|``."""

    if len(modals) > len(proposals):
        raise StereoInputError(f"Cannot match {len(modals)} modals to {len(proposals)} proposals")
    if not len(modals):
        return MatchAssignment(pairs=[], cost=0.0)
    if method == "hungarian":
        return hungarian_match(modals, proposals)
    if method == "exhaustive":
        return exhaustive_match(modals, proposals)
    raise ValueError(f"unknown matching method {method!r}")


@lru_cache(maxsize=None)
def _partial_injections(slots: int, k: int) -> Tuple[Tuple[int, ...], ...]:
    """Every map from modal slots to proposals or ``k`` (unmatched) that is injective on matched slots."""

    table = []
    for choice in itertools.product(range(k + 1), repeat=slots):
        matched = [c for c in choice if c < k]
        if len(matched) == len(set(matched)):
            table.append(choice)
    return tuple(table)


def batched_match(modals: torch.Tensor, valid: torch.Tensor, proposals: torch.Tensor) -> torch.Tensor:
    """Exact matching for every pixel at once by enumerating all partial injections.

    Returns the proposal index for each modal slot, ``-1`` where unmatched. Valid
    modals stay unmatched only when they outnumber the proposals.
    """

    slots, k = modals.shape[-1], proposals.shape[-1]
    table = torch.tensor(_partial_injections(slots, k), device=modals.device)
    flat_modals = modals.detach().reshape(-1, slots).double()
    flat_valid = valid.reshape(-1, slots)
    flat_proposals = proposals.detach().reshape(-1, k).double()

    distance = (flat_modals.unsqueeze(-1) - flat_proposals.unsqueeze(-2)).abs()
    distance = F.pad(distance, (0, 1))
    slot_index = torch.arange(slots, device=modals.device)
    per_slot = distance[:, slot_index[None, :], table]
    matched = (table < k).unsqueeze(0)
    slot_valid = flat_valid.unsqueeze(1)
    cost = torch.where(matched & slot_valid, per_slot, torch.zeros_like(per_slot))
    cost = cost + UNMATCHED_PENALTY * (matched != slot_valid).to(cost.dtype)
    best = cost.sum(dim=-1).argmin(dim=-1)

    assignment = table[best]
    assignment = assignment.masked_fill(assignment == k, -1)
    return assignment.reshape(modals.shape)


def _zero_loss(reference: torch.Tensor) -> torch.Tensor:
    return reference.sum() * 0.0


def proposal_loss(
    modals: torch.Tensor, valid: torch.Tensor, proposals: torch.Tensor, beta: float = 1.0
) -> torch.Tensor:
    """Smooth-L1 between matched (modal, proposal) pairs, summed per pixel and averaged over pixels with modals."""

    has_modal = valid.any(dim=-1)
    if not has_modal.any():
        return _zero_loss(proposals)
    assignment = batched_match(modals, valid, proposals)
    matched = assignment >= 0
    chosen = torch.gather(proposals, -1, assignment.clamp(min=0))
    pair_loss = F.smooth_l1_loss(chosen, modals.to(chosen.dtype), reduction="none", beta=beta)
    per_pixel = (pair_loss * matched.to(pair_loss.dtype)).sum(dim=-1)
    return per_pixel[has_modal].mean()


def displace_mass(
    z_coarse: Union[float, torch.Tensor], weight: Union[float, torch.Tensor]
) -> Tuple[Tuple[torch.Tensor, torch.Tensor], Tuple[torch.Tensor, torch.Tensor]]:
    """Split ``weight`` between ``floor(z)`` and ``floor(z) + 1`` by linear proximity."""

    z = torch.as_tensor(z_coarse)
    w = torch.as_tensor(weight, dtype=z.dtype if z.is_floating_point() else torch.get_default_dtype())
    z = z.to(w.dtype)
    lower = torch.floor(z)
    frac = z - lower
    return (lower.long(), w * (1.0 - frac)), (lower.long() + 1, w * frac)


def modal_weights(valid: torch.Tensor, base: Sequence[float] = MODAL_WEIGHTS) -> torch.Tensor:
    """Leading weights for the valid (front-compacted) modals, renormalized to sum to 1."""

    weights = torch.tensor(base[: valid.shape[-1]], dtype=torch.float32, device=valid.device)
    weights = weights * valid.to(weights.dtype)
    total = weights.sum(dim=-1, keepdim=True)
    return torch.where(total > 0, weights / total.clamp(min=1e-12), torch.zeros_like(weights))


def init_target(modals: torch.Tensor, valid: torch.Tensor, num_shifts: int) -> torch.Tensor:
    """Ground-truth distribution over coarse shifts ``[..., num_shifts]`` built from displaced modal masses."""

    z_coarse = (modals / COARSE_SCALE).clamp(0.0, float(num_shifts - 1))
    weights = modal_weights(valid).to(modals.dtype)
    (lower, w_lower), (upper, w_upper) = displace_mass(z_coarse, weights)
    target = modals.new_zeros(*modals.shape[:-1], num_shifts)
    target = target.scatter_add(-1, lower.clamp(max=num_shifts - 1), w_lower)
    return target.scatter_add(-1, upper.clamp(max=num_shifts - 1), w_upper)


def init_loss(volume: CostVolume, modals: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Cross-entropy between displaced modal masses and the softmax of the cost volume along disparity."""

    scores = volume.for_init_loss()
    # modals beyond the last coarse shift carry no mass
    valid = valid & (modals <= (volume.num_shifts - 1) * COARSE_SCALE)
    has_modal = valid.any(dim=-1)
    if not has_modal.any():
        return _zero_loss(scores)
    target = init_target(modals.to(scores.dtype), valid, volume.num_shifts)
    per_pixel = -(target * F.log_softmax(scores, dim=-1)).sum(dim=-1)
    return per_pixel[has_modal].mean()


def disparity_loss(
    hypotheses: torch.Tensor,
    probabilities: torch.Tensor,
    target: torch.Tensor,
    valid: torch.Tensor,
    z_max: Optional[float] = None,
) -> torch.Tensor:
    """Expected L1 error under the hypothesis distribution, averaged over valid pixels.

    ``hypotheses`` and ``probabilities`` are ``[B, k, H, W]``; ``target`` and ``valid`` ``[B, H, W]``.
    """

    mask = valid.clone()
    if z_max is not None:
        mask &= target <= z_max
    if not mask.any():
        return _zero_loss(hypotheses)
    expected = (probabilities * (hypotheses - target.unsqueeze(1)).abs()).sum(dim=1)
    return expected[mask].mean()


@dataclass
class LossBreakdown:
    init: torch.Tensor
    prop: torch.Tensor
    disp_coarse: torch.Tensor
    disp_refine: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> Dict[str, float]:
        return {
            "init": float(self.init.detach()),
            "prop": float(self.prop.detach()),
            "disp_coarse": float(self.disp_coarse.detach()),
            "disp_refine": float(self.disp_refine.detach()),
            "total": float(self.total.detach()),
        }


def total_loss(
    init: torch.Tensor,
    prop: torch.Tensor,
    disp_coarse: torch.Tensor,
    disp_refine: torch.Tensor,
    weights: Optional[LossWeights] = None,
) -> LossBreakdown:
    w_init, w_prop, w_disp = (1.0, 1.0, 1.0) if weights is None else (weights.init, weights.prop, weights.disp)
    total = w_init * init + w_prop * prop + w_disp * (disp_coarse + disp_refine)
    return LossBreakdown(init=init, prop=prop, disp_coarse=disp_coarse, disp_refine=disp_refine, total=total)
