"""Resize/crop augmentation shared by training and evaluation.

Frames are bilinearly resized to a square `resize` target, then cropped to
`crop`: a random offset in train mode (identical for the frame and its
masks), the center offset in eval mode. Masks are resized nearest-neighbor so
they stay binary.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


def _as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(x), dtype=torch.float32)


def resize_frames(frames: torch.Tensor, size: int, mask: bool = False) -> torch.Tensor:
    """Resize (C, H, W) or (C, H, W, T) to a square `size`; nearest for masks."""
    squeeze = frames.dim() == 3
    x = frames.unsqueeze(3) if squeeze else frames
    x = x.permute(3, 0, 1, 2)  # (T, C, H, W)
    if mask:
        x = F.interpolate(x, size=(size, size), mode="nearest")
    else:
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    x = x.permute(1, 2, 3, 0)
    return x[..., 0] if squeeze else x


def crop_offsets(mode: str, resize: int, crop: int, rng: np.random.Generator | None):
    """Shared crop-window origin: random in train mode, centered in eval mode."""
    if crop > resize:
        raise ValueError(f"crop {crop} exceeds resize {resize}")
    if mode == "eval":
        off = (resize - crop) // 2
        return off, off
    if mode != "train":
        raise ValueError(f"unknown augmentation mode {mode!r}")
    if rng is None:
        raise ValueError("train mode requires an rng")
    top = int(rng.integers(0, resize - crop + 1))
    left = int(rng.integers(0, resize - crop + 1))
    return top, left


def augment(frame, masks, mode: str, resize: int, crop: int, rng=None):
    """Augment one frame (C, H, W) with optional masks (C_cls, H, W).

    Returns float32 torch tensors cropped to (crop, crop); the same window is
    applied to the frame and the masks. Deterministic given the rng state.
    """
    frame = _as_tensor(frame)
    frame = resize_frames(frame, resize)
    if masks is not None:
        masks = resize_frames(_as_tensor(masks), resize, mask=True)
    top, left = crop_offsets(mode, resize, crop, rng)
    frame = frame[:, top : top + crop, left : left + crop]
    if masks is not None:
        masks = masks[:, top : top + crop, left : left + crop]
    return frame, masks


def augment_clip(frames, annotations, mode: str, resize: int, crop: int, rng=None):
    """Augment a clip (C, H, W, T) and its {t: (C_cls, H, W)} annotations.

    One crop window is drawn for the whole clip so temporal structure is
    preserved.
    """
    frames = resize_frames(_as_tensor(frames), resize)
    top, left = crop_offsets(mode, resize, crop, rng)
    frames = frames[:, top : top + crop, left : left + crop, :]
    out_ann = {}
    for t, mask in (annotations or {}).items():
        mask = resize_frames(_as_tensor(mask), resize, mask=True)
        out_ann[t] = mask[:, top : top + crop, left : left + crop]
    return frames, out_ann
