"""Training loop: supervised segmentation plus the semi-supervised cycle loss.

Each optimization step draws `labeled_batch` aligned multi-view annotated
frame groups (segmentation + center-map supervision) and `unlabeled_batch`
multi-view clips of `clip_length` consecutive frames (cycle loss on the
globally fused features). The optimizer is Adam with cosine learning-rate
annealing to zero; the best checkpoint is picked by validation average Dice.
Data loading is serial and fully seeded so repeat runs are reproducible.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .config import TrainConfig
from .cycle import dense_cycle_loss
from .data import (
    DatasetManifest,
    MultiViewVideoSample,
    SampleRecord,
    common_annotated_indices,
    load_sample,
    sample_clip,
)
from .errors import ConfigError, TrainingDiverged
from .evaluate import evaluate_split, model_predict_fn
from .losses import seg_loss, total_loss
from .model import MultiViewSegmenter, save_checkpoint
from .transforms import augment, augment_clip


@dataclass
class RunReport:
    config: dict
    seed: int
    best_epoch: int
    best_val_dice: float
    average_dice: float
    dice_table: list[dict]  # rows: view, class, frame_count, mean_dice
    loss_curves: dict[str, list[float]]
    val_dice_curve: list[float]
    checkpoint_path: str
    wall_time_s: float = 0.0

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)
            fh.write("\n")


def load_run_report(path) -> RunReport:
    with open(path, "r", encoding="utf-8") as fh:
        return RunReport(**json.load(fh))


def center_target(masks: torch.Tensor) -> torch.Tensor:
    """Per-class normalized interior distance map.

    Inside each class mask the target rises from 0 at the boundary to 1 at
    the deepest interior point; outside it is 0. Empty classes give a zero
    map.
    """
    binary = (masks.detach().cpu().numpy() > 0.5)
    out = np.zeros(binary.shape, dtype=np.float32)
    for c in range(binary.shape[0]):
        if binary[c].any():
            dt = ndimage.distance_transform_edt(binary[c])
            peak = dt.max()
            if peak > 0:
                out[c] = dt / peak
    return torch.from_numpy(out)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing: lr(0) = base_lr, lr(total_epochs - 1) = 0."""
    if total_epochs <= 1:
        return base_lr
    t = epoch / (total_epochs - 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


class SampleStore:
    """Loads and caches decoded videos by sample id."""

    def __init__(self, manifest: DatasetManifest, max_items: int = 64):
        self.manifest = manifest
        self.max_items = max_items
        self._cache: dict[str, MultiViewVideoSample] = {}

    def get(self, record: SampleRecord) -> MultiViewVideoSample:
        sample = self._cache.get(record.sample_id)
        if sample is None:
            sample = load_sample(self.manifest, record)
            if len(self._cache) >= self.max_items:
                self._cache.pop(next(iter(self._cache)))
            self._cache[record.sample_id] = sample
        return sample


def _labeled_pool(store: SampleStore, records: list[SampleRecord]):
    """All (record, frame index) pairs annotated in every view."""
    pool = []
    for record in records:
        sample = store.get(record)
        for t in common_annotated_indices(sample):
            pool.append((record, t))
    return pool


def _labeled_batch(
    store: SampleStore,
    groups: list[tuple[SampleRecord, int]],
    views,
    config: TrainConfig,
    rng: np.random.Generator,
):
    """Stack B aligned frame groups into per-view (C, H, W, B) inputs.

    Returns (frames dict, seg targets dict, center targets dict); targets are
    per-view lists of B (C_cls, crop, crop) tensors.
    """
    frames: dict[str, list[torch.Tensor]] = {v.view_id: [] for v in views}
    targets: dict[str, list[torch.Tensor]] = {v.view_id: [] for v in views}
    centers: dict[str, list[torch.Tensor]] = {v.view_id: [] for v in views}
    for record, t in groups:
        sample = store.get(record)
        for view in views:
            frame = sample.frames[view.view_id][:, :, :, t]
            mask = sample.annotations[view.view_id][t]
            frame, mask = augment(frame, mask, "train", config.resize, config.crop, rng)
            frames[view.view_id].append(frame)
            targets[view.view_id].append(mask)
            centers[view.view_id].append(center_target(mask))
    stacked = {v: torch.stack(fs, dim=3) for v, fs in frames.items()}
    return stacked, targets, centers


def _unlabeled_clip(
    store: SampleStore,
    records: list[SampleRecord],
    config: TrainConfig,
    pick_rng: np.random.Generator,
    augment_rng: np.random.Generator,
):
    """Sample one multi-view clip and augment each view with its own window."""
    record = records[int(pick_rng.integers(0, len(records)))]
    sample = store.get(record)
    window_seed = int(pick_rng.integers(0, 2**31 - 1))
    clip = sample_clip(sample, config.clip_length, window_seed)
    frames = {}
    for view in sample.views:
        aug, _ = augment_clip(
            clip.frames[view.view_id], None, "train", config.resize, config.crop, augment_rng
        )
        frames[view.view_id] = aug
    return frames, record.sample_id, window_seed


def _split_time_last(logits: torch.Tensor) -> list[torch.Tensor]:
    return [logits[:, :, :, i] for i in range(logits.shape[3])]


def _divergence_dump(out_dir: Path, info: dict) -> Path:
    path = out_dir / "diverged.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir,
    seed: int | None = None,
    quiet: bool = False,
) -> RunReport:
    started = time.time()
    seed = config.rng_seed if seed is None else int(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_records = manifest.split_samples("train")
    if not train_records:
        raise ConfigError("train split is empty")
    val_records = manifest.split_samples("val")
    if not val_records:
        raise ConfigError("val split is empty")

    torch.manual_seed(seed)
    model = MultiViewSegmenter(
        views=manifest.views, backbone=config.backbone, mgfm=config.mgfm, mlfm=config.mlfm
    )
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )

    batch_rng = np.random.default_rng([seed, 1])
    augment_rng = np.random.default_rng([seed, 2])
    clip_rng = np.random.default_rng([seed, 3])
    cycle_gen = torch.Generator().manual_seed(seed + 17)

    store = SampleStore(manifest)
    pool = _labeled_pool(store, train_records)
    if not pool:
        raise ConfigError("no frame is annotated in every view of any train sample")
    steps_per_epoch = max(1, len(pool) // config.labeled_batch)
    cycle_config = config.cycle.config()
    use_cycle = config.cycle.enabled and config.unlabeled_batch > 0

    loss_curves: dict[str, list[float]] = {"seg": [], "cycle": [], "center": [], "total": []}
    val_dice_curve: list[float] = []
    best_val = -1.0
    best_epoch = -1
    best_path = out_dir / "best.ckpt"
    predict = model_predict_fn(model)

    for epoch in range(config.epochs):
        lr = (
            cosine_lr(config.learning_rate, epoch, config.epochs)
            if config.schedule == "cosine"
            else config.learning_rate
        )
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        order = batch_rng.permutation(len(pool))
        epoch_losses = {"seg": 0.0, "cycle": 0.0, "center": 0.0, "total": 0.0}
        for step in range(steps_per_epoch):
            picks = order[step * config.labeled_batch : (step + 1) * config.labeled_batch]
            groups = [pool[i] for i in picks]
            frames, targets, centers = _labeled_batch(
                store, groups, manifest.views, config, augment_rng
            )

            output = model(frames)
            seg = seg_loss(
                {v: _split_time_last(output.logits[v]) for v in output.logits},
                targets,
                reduction=config.loss.seg_reduction,
            )
            if output.center_logits:
                center = seg_loss(
                    {v: _split_time_last(output.center_logits[v]) for v in output.center_logits},
                    centers,
                    reduction=config.loss.seg_reduction,
                )
            else:
                center = None

            clip_info = None
            if use_cycle:
                clip_frames, clip_id, window_seed = _unlabeled_clip(
                    store, train_records, config, clip_rng, augment_rng
                )
                clip_info = {"sample_id": clip_id, "window_seed": window_seed}
                _, fused = model.forward_features(clip_frames)
                cyc = dense_cycle_loss(fused, cycle_config, rng=cycle_gen)
            else:
                cyc = torch.zeros(())

            loss = total_loss(seg, cyc, config.loss, center=center)
            if not torch.isfinite(loss):
                dump = _divergence_dump(
                    out_dir,
                    {
                        "epoch": epoch,
                        "step": step,
                        "seed": seed,
                        "lr": lr,
                        "seg": seg.item(),
                        "cycle": cyc.item(),
                        "center": None if center is None else center.item(),
                        "labeled_groups": [
                            {"sample_id": r.sample_id, "frame": t} for r, t in groups
                        ],
                        "unlabeled_clip": clip_info,
                    },
                )
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}", dump_path=dump
                )

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            epoch_losses["seg"] += seg.item()
            epoch_losses["cycle"] += cyc.item()
            epoch_losses["center"] += 0.0 if center is None else center.item()
            epoch_losses["total"] += loss.item()

        for key in loss_curves:
            loss_curves[key].append(epoch_losses[key] / steps_per_epoch)

        model.eval()
        val_result = evaluate_split(
            predict, manifest, "val", config.resize, config.crop, store=store
        )
        val_dice = val_result.average_dice
        val_dice_curve.append(val_dice)
        if val_dice > best_val:
            best_val = val_dice
            best_epoch = epoch
            save_checkpoint(
                best_path,
                model,
                extra={"config": config.to_dict(), "seed": seed, "epoch": epoch,
                       "val_dice": val_dice},
            )
        if not quiet:
            print(
                f"epoch {epoch + 1}/{config.epochs} lr {lr:.2e} "
                f"loss {loss_curves['total'][-1]:.4f} val dice {val_dice:.4f}"
            )

    from .model import load_checkpoint

    best_model, _ = load_checkpoint(best_path)
    final = evaluate_split(
        model_predict_fn(best_model), manifest, "val", config.resize, config.crop, store=store
    )
    report = RunReport(
        config=config.to_dict(),
        seed=seed,
        best_epoch=best_epoch,
        best_val_dice=best_val,
        average_dice=final.average_dice,
        dice_table=final.rows(),
        loss_curves=loss_curves,
        val_dice_curve=val_dice_curve,
        checkpoint_path=str(best_path),
        wall_time_s=time.time() - started,
    )
    report.save(out_dir / "report.json")
    return report
