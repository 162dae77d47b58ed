"""Supervised segmentation loss, total objective, and Dice evaluation.

The segmentation loss is multi-label binary cross entropy (one sigmoid per
class channel), averaged per frame over pixels and classes and summed over
views and annotated frames; a `mean` reduction divides by the number of
view-frame terms instead. Predictions binarize at sigmoid(logit) > 0.5.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeError


@dataclass
class LossWeights:
    alpha: float = 1.0  # weight on the cycle loss
    center_aux: float = 0.1  # weight on the center-head auxiliary loss
    seg_reduction: str = "sum"  # "sum" (over view-frames) or "mean"

    def __post_init__(self):
        if self.alpha < 0 or self.center_aux < 0:
            raise ValueError("loss weights must be non-negative")
        if self.seg_reduction not in ("sum", "mean"):
            raise ValueError(f"unknown seg_reduction {self.seg_reduction!r}")


def seg_loss(
    predictions: dict[str, list[torch.Tensor]],
    targets: dict[str, list[torch.Tensor]],
    reduction: str = "sum",
) -> torch.Tensor:
    """BCE over annotated frames of every view.

    predictions[view] and targets[view] are matching lists of (C, H, W)
    logits and binary masks, one entry per annotated frame. Each frame
    contributes its per-pixel-per-class mean BCE; frames are summed (or
    averaged) across views. An empty annotation set warns and returns 0.
    """
    terms = []
    for view_id, frames in predictions.items():
        masks = targets.get(view_id, [])
        if len(frames) != len(masks):
            raise ShapeError(
                f"view {view_id}: {len(frames)} predictions vs {len(masks)} targets"
            )
        for logits, mask in zip(frames, masks):
            if logits.shape != mask.shape:
                raise ShapeError(
                    f"view {view_id}: prediction {tuple(logits.shape)} != "
                    f"target {tuple(mask.shape)}"
                )
            terms.append(F.binary_cross_entropy_with_logits(logits, mask))
    if not terms:
        warnings.warn("seg_loss called with no annotated frames; returning 0", stacklevel=2)
        return torch.zeros(())
    stacked = torch.stack(terms)
    return stacked.mean() if reduction == "mean" else stacked.sum()


def total_loss(
    seg: torch.Tensor,
    cyc: torch.Tensor,
    weights: LossWeights,
    center: torch.Tensor | None = None,
) -> torch.Tensor:
    """L = L_seg + alpha * L_cyc (+ center_aux * L_center)."""
    out = seg + weights.alpha * cyc
    if center is not None:
        out = out + weights.center_aux * center
    return out


def dice_score(pred_mask, gt_mask) -> float:
    """2|A∩B| / (|A|+|B|) for binary masks; 1.0 when both are empty."""
    pred = torch.as_tensor(pred_mask)
    gt = torch.as_tensor(gt_mask)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    pred = pred > 0.5
    gt = gt > 0.5
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    intersection = int((pred & gt).sum())
    return 2.0 * intersection / total


def binarize(logits: torch.Tensor) -> torch.Tensor:
    """Multi-label prediction: sigmoid(logit) > 0.5 per class channel."""
    return (torch.sigmoid(logits) > 0.5).to(torch.float32)
