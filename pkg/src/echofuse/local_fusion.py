"""Local cross-view fusion.

Per-view local feature masks are derived from pseudo-label logits and
center-head logits: sigmoid both, reduce over class channels by max, pool to
the feature grid, multiply, and (in the literal variant) squash through one
more sigmoid. Masks then scale the per-view features before view-wise
concatenation and attention.

The literal variant confines mask values to (0.5, 0.7311) because the outer
sigmoid is fed a product of two numbers in (0, 1); the unbounded variant
drops the outer sigmoid and spans (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .backbone import SegmentationOutput, ViewFeatureVolume
from .errors import ShapeError
from .global_fusion import StackedViews, ViewWiseAttention, view_concat, view_wise_attention

MASK_VARIANTS = ("literal", "unbounded")


@dataclass
class FeatureMask:
    """Single-channel per-view mask, values (1, h, w, T) on the feature grid."""

    values: torch.Tensor
    view_id: str
    resolution: str = "feature-grid"


def compute_feature_mask(
    pseudo_logits: SegmentationOutput,
    center_logits: torch.Tensor,
    grid: tuple[int, int],
    variant: str = "literal",
) -> FeatureMask:
    """Build the local feature mask for one view.

    Both logit stacks are (C_view, H, W, T) and must agree in shape. Per
    position: a = max over classes of sigmoid(pseudo), b = max over classes of
    sigmoid(center); both are average-pooled to the (h, w) feature grid, and
    the mask is sigmoid(a*b) (literal) or a*b (unbounded).
    """
    if variant not in MASK_VARIANTS:
        raise ValueError(f"unknown mask variant {variant!r}")
    logits = pseudo_logits.logits
    if logits.shape != center_logits.shape:
        raise ShapeError(
            f"pseudo logits {tuple(logits.shape)} != center logits {tuple(center_logits.shape)}"
        )

    def pooled_foreground(x: torch.Tensor) -> torch.Tensor:
        # (C, H, W, T) -> (T, 1, h, w)
        prob = torch.sigmoid(x).amax(dim=0)  # (H, W, T)
        prob = prob.permute(2, 0, 1).unsqueeze(1)
        return F.adaptive_avg_pool2d(prob, grid)

    product = pooled_foreground(logits) * pooled_foreground(center_logits)
    if variant == "literal":
        product = torch.sigmoid(product)
    values = product.permute(1, 2, 3, 0)  # (1, h, w, T)
    return FeatureMask(values=values, view_id=pseudo_logits.view_id)


def apply_feature_masks(
    features: list[ViewFeatureVolume], masks: list[FeatureMask]
) -> list[ViewFeatureVolume]:
    """Scale each view's features by its mask (broadcast over channels)."""
    if len(features) != len(masks):
        raise ValueError(f"got {len(features)} views but {len(masks)} masks")
    scaled = []
    for volume, mask in zip(features, masks):
        if mask.values.shape[1:3] != volume.values.shape[1:3]:
            raise ShapeError(
                f"mask grid {tuple(mask.values.shape[1:3])} != feature grid "
                f"{tuple(volume.values.shape[1:3])} for view {volume.view_id}"
            )
        scaled.append(
            ViewFeatureVolume(
                values=volume.values * mask.values,
                view_id=volume.view_id,
                stride=volume.stride,
            )
        )
    return scaled


def apply_local_fusion(
    features: list[ViewFeatureVolume],
    masks: list[FeatureMask],
    attention: ViewWiseAttention,
) -> StackedViews:
    """Mask, stack and attend: the locally fused multi-view volume."""
    return view_wise_attention(view_concat(apply_feature_masks(features, masks)), attention)
