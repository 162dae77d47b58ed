"""Evaluation: full-split Dice reporting and optional overlay rendering.

Every annotated frame of every video in the requested split is resized and
center-cropped, pushed through a prediction function, and scored per class
with the Dice overlap. Because the network attends only within frames, long
videos are processed in time chunks without changing the result.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import DatasetManifest, load_sample
from .errors import ConfigError
from .losses import binarize, dice_score
from .model import MultiViewSegmenter, load_checkpoint
from .transforms import augment_clip

AVERAGE_ROW = "AVERAGE"
VIEW_MEAN_CLASS = "ALL"


@dataclass
class EvalResult:
    """Per-class Dice stats plus per-view and overall means."""

    class_stats: dict[tuple[str, str], tuple[int, float]]  # (view, class) -> (frames, mean)
    view_order: tuple[str, ...]
    class_order: dict[str, tuple[str, ...]]

    @property
    def view_means(self) -> dict[str, float]:
        means = {}
        for view in self.view_order:
            per_class = [self.class_stats[(view, c)][1] for c in self.class_order[view]]
            means[view] = float(np.mean(per_class)) if per_class else 0.0
        return means

    @property
    def average_dice(self) -> float:
        means = self.view_means
        return float(np.mean([means[v] for v in self.view_order])) if means else 0.0

    def rows(self) -> list[dict]:
        rows = []
        for view in self.view_order:
            for cls in self.class_order[view]:
                count, mean = self.class_stats[(view, cls)]
                rows.append(
                    {"view": view, "class": cls, "frame_count": count, "mean_dice": mean}
                )
        total_frames = {
            view: max((self.class_stats[(view, c)][0] for c in self.class_order[view]), default=0)
            for view in self.view_order
        }
        for view, mean in self.view_means.items():
            rows.append(
                {
                    "view": view,
                    "class": VIEW_MEAN_CLASS,
                    "frame_count": total_frames[view],
                    "mean_dice": mean,
                }
            )
        rows.append(
            {
                "view": AVERAGE_ROW,
                "class": VIEW_MEAN_CLASS,
                "frame_count": sum(total_frames.values()),
                "mean_dice": self.average_dice,
            }
        )
        return rows


def write_csv(result: EvalResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["view", "class", "frame_count", "mean_dice"])
        writer.writeheader()
        for row in result.rows():
            writer.writerow({**row, "mean_dice": f"{row['mean_dice']:.6f}"})


def model_predict_fn(model: MultiViewSegmenter, chunk: int = 16):
    """Wrap a model as predict(video_id, frames) with chunked inference.

    frames maps view -> (C, H, W, T); the output maps view -> per-class
    segmentation logits (C_view, H, W, T). Chunking along T is exact because
    no computation crosses frame boundaries.
    """

    def predict(video_id: str, frames: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        T = next(iter(frames.values())).shape[3]
        pieces: dict[str, list[torch.Tensor]] = {v: [] for v in frames}
        model.eval()
        with torch.no_grad():
            for start in range(0, T, chunk):
                part = {v: f[:, :, :, start : start + chunk] for v, f in frames.items()}
                output = model(part)
                for v, logits in output.logits.items():
                    pieces[v].append(logits)
        return {v: torch.cat(parts, dim=3) for v, parts in pieces.items()}

    return predict


def evaluate_split(
    predict_fn,
    manifest: DatasetManifest,
    split: str,
    resize: int = 144,
    crop: int = 112,
    store=None,
    overlay_dir=None,
    max_overlays: int = 8,
) -> EvalResult:
    """Score predict_fn on every annotated frame of a split.

    predict_fn(video_id, frames) receives eval-augmented (resized,
    center-cropped) frames and must return per-view logits of the same
    spatial size. Dice is computed against the identically augmented masks.
    """
    records = manifest.split_samples(split)
    if not records:
        raise ConfigError(f"split {split!r} is empty")
    per_class: dict[tuple[str, str], list[float]] = {}
    class_order = {v.view_id: v.class_set for v in manifest.views}
    view_order = tuple(v.view_id for v in manifest.views)
    overlays_written = 0

    for record in records:
        sample = store.get(record) if store is not None else load_sample(manifest, record)
        frames = {}
        masks = {}
        for view in manifest.views:
            aug_frames, aug_masks = augment_clip(
                sample.frames[view.view_id],
                sample.annotations[view.view_id],
                "eval",
                resize,
                crop,
            )
            frames[view.view_id] = aug_frames
            masks[view.view_id] = aug_masks

        logits = predict_fn(record.sample_id, frames)

        for view in manifest.views:
            view_logits = logits[view.view_id]
            for t, gt in masks[view.view_id].items():
                pred = binarize(view_logits[:, :, :, t])
                for c, cls in enumerate(view.class_set):
                    per_class.setdefault((view.view_id, cls), []).append(
                        dice_score(pred[c], gt[c])
                    )
                if overlay_dir is not None and overlays_written < max_overlays:
                    _write_overlay(
                        Path(overlay_dir) / f"{record.sample_id}_{view.view_id}_{t:05d}.png",
                        frames[view.view_id][:, :, :, t],
                        pred,
                        gt,
                    )
                    overlays_written += 1

    class_stats = {
        key: (len(scores), float(np.mean(scores))) for key, scores in per_class.items()
    }
    for view in view_order:
        for cls in class_order[view]:
            class_stats.setdefault((view, cls), (0, 0.0))
    return EvalResult(class_stats=class_stats, view_order=view_order, class_order=class_order)


def _write_overlay(path, frame: torch.Tensor, pred: torch.Tensor, gt: torch.Tensor) -> None:
    """Grayscale frame with prediction in red and ground truth in green."""
    from PIL import Image

    gray = frame[0].clamp(0, 1).numpy()
    rgb = np.stack([gray, gray, gray], axis=2)
    pred_any = pred.amax(dim=0).numpy() > 0.5
    gt_any = gt.amax(dim=0).numpy() > 0.5
    rgb[pred_any] = 0.55 * rgb[pred_any] + 0.45 * np.array([1.0, 0.1, 0.1])
    rgb[gt_any] = 0.55 * rgb[gt_any] + 0.45 * np.array([0.1, 1.0, 0.1])
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((rgb * 255).round().astype(np.uint8)).save(path)


def evaluate_checkpoint(
    checkpoint_path,
    manifest: DatasetManifest,
    split: str,
    resize: int | None = None,
    crop: int | None = None,
    overlay_dir=None,
) -> EvalResult:
    """Load a checkpoint and evaluate it; resize/crop default to its config."""
    model, extra = load_checkpoint(checkpoint_path)
    saved = extra.get("config", {})
    resize = saved.get("resize", 144) if resize is None else resize
    crop = saved.get("crop", 112) if crop is None else crop
    return evaluate_split(
        model_predict_fn(model), manifest, split, resize=resize, crop=crop,
        overlay_dir=overlay_dir,
    )
