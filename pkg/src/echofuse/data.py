"""Dataset schema, manifest I/O, sparse-annotation pairing and clip sampling.

A dataset lives on disk as a JSON manifest plus directories of 8-bit grayscale
PNG frames and {0,255} PNG masks (one mask image per annotated frame per
class). The manifest schema:

    {
      "views": [{"view_id": "PLVLA", "class_set": ["LV", "RV"]}, ...],
      "resolution": [H, W],
      "samples": [
        {
          "id": "vid_0000",
          "split": "train",
          "views": {
            "PLVLA": {
              "frame_dir": "frames/vid_0000/PLVLA",
              "annotations": [
                {"frame_index": 0, "masks": {"LV": "...png", "RV": "...png"}}
              ]
            },
            ...
          }
        },
        ...
      ]
    }

All paths are relative to the manifest's directory. Loading is read-only and
safe to call from multiple workers; loaded samples are plain value objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError

CHAMBERS = ("LV", "RV", "LA", "RA")
VIEW_COUNT = 3

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ViewSpec:
    """One echocardiographic view and the chamber classes it shows."""

    view_id: str
    class_set: tuple[str, ...]

    def __post_init__(self):
        if not self.class_set:
            raise ManifestError(f"view {self.view_id!r} has an empty class_set")
        unknown = set(self.class_set) - set(CHAMBERS)
        if unknown:
            raise ManifestError(f"view {self.view_id!r} has unknown classes {sorted(unknown)}")
        if len(set(self.class_set)) != len(self.class_set):
            raise ManifestError(f"view {self.view_id!r} repeats a class")


DEFAULT_VIEWS = (
    ViewSpec("PLVLA", ("LV", "RV")),
    ViewSpec("LVSA", ("LV", "RV")),
    ViewSpec("A4C", ("LV", "LA", "RA", "RV")),
)


@dataclass(frozen=True)
class AnnotationRecord:
    frame_index: int
    mask_paths: dict[str, str]  # class name -> relative path


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    split: str
    frame_dirs: dict[str, str]  # view_id -> relative path
    annotations: dict[str, tuple[AnnotationRecord, ...]]  # view_id -> records


@dataclass
class DatasetManifest:
    views: tuple[ViewSpec, ...]
    samples: list[SampleRecord]
    resolution: tuple[int, int]
    root: Path = field(default_factory=Path)

    def view(self, view_id: str) -> ViewSpec:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(view_id)

    def split_samples(self, split: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == split]

    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.samples:
            counts[s.split] = counts.get(s.split, 0) + 1
        return counts


@dataclass
class MultiViewVideoSample:
    """Aligned per-view frame stacks with sparse per-view annotations.

    frames[view_id] is float32 (C, H, W, T) in [0, 1]; annotations[view_id]
    maps frame index -> float32 (C_classes, H, W) binary masks ordered by the
    view's class_set. All views share the same T.
    """

    patient_id: str
    views: tuple[ViewSpec, ...]
    frames: dict[str, np.ndarray]
    annotations: dict[str, dict[int, np.ndarray]]

    def __post_init__(self):
        lengths = {v: f.shape[3] for v, f in self.frames.items()}
        if len(set(lengths.values())) > 1:
            raise ManifestError(f"frame counts differ across views: {lengths}")
        for view_id, ann in self.annotations.items():
            indices = sorted(ann)
            if any(b <= a for a, b in zip(indices, indices[1:])):
                raise ManifestError(f"annotated frame indices not strictly increasing in {view_id}")
            if indices and indices[-1] >= self.num_frames:
                raise ManifestError(f"annotation index {indices[-1]} out of range in {view_id}")

    @property
    def num_frames(self) -> int:
        return next(iter(self.frames.values())).shape[3]

    def view(self, view_id: str) -> ViewSpec:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(view_id)


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def _parse_views(raw) -> tuple[ViewSpec, ...]:
    views = tuple(ViewSpec(v["view_id"], tuple(v["class_set"])) for v in raw)
    ids = [v.view_id for v in views]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"duplicate view ids: {ids}")
    return views


def load_manifest(path) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Raises ManifestError for schema violations and FileNotFoundError (naming
    the offending path) when a referenced frame directory or mask file is
    missing.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc

    for key in ("views", "samples", "resolution"):
        if key not in doc:
            raise ManifestError(f"manifest missing field {key!r}")
    views = _parse_views(doc["views"])
    view_ids = {v.view_id for v in views}
    resolution = tuple(int(x) for x in doc["resolution"])

    root = path.parent
    samples: list[SampleRecord] = []
    seen_ids: set[str] = set()
    for raw in doc["samples"]:
        sid = raw["id"]
        if sid in seen_ids:
            raise ManifestError(f"duplicate sample id {sid!r}")
        seen_ids.add(sid)
        split = raw["split"]
        if split not in SPLITS:
            raise ManifestError(f"sample {sid!r} has unknown split {split!r}")
        raw_views = raw["views"]
        if set(raw_views) != view_ids or len(raw_views) != VIEW_COUNT:
            raise ManifestError(
                f"sample {sid!r} references views {sorted(raw_views)}; expected {sorted(view_ids)}"
            )
        frame_dirs: dict[str, str] = {}
        annotations: dict[str, tuple[AnnotationRecord, ...]] = {}
        for view_id, entry in raw_views.items():
            frame_dir = entry["frame_dir"]
            if not (root / frame_dir).is_dir():
                raise FileNotFoundError(f"frame directory missing: {root / frame_dir}")
            frame_dirs[view_id] = frame_dir
            spec = next(v for v in views if v.view_id == view_id)
            records = []
            last_index = -1
            for ann in entry.get("annotations", ()):
                idx = int(ann["frame_index"])
                if idx <= last_index:
                    raise ManifestError(
                        f"sample {sid!r} view {view_id}: annotation indices not strictly increasing"
                    )
                last_index = idx
                masks = dict(ann["masks"])
                if set(masks) != set(spec.class_set):
                    raise ManifestError(
                        f"sample {sid!r} view {view_id} frame {idx}: mask classes "
                        f"{sorted(masks)} != view classes {sorted(spec.class_set)}"
                    )
                for cls, rel in masks.items():
                    if not (root / rel).is_file():
                        raise FileNotFoundError(f"mask file missing: {root / rel}")
                records.append(AnnotationRecord(idx, masks))
            annotations[view_id] = tuple(records)
        samples.append(SampleRecord(sid, split, frame_dirs, annotations))

    return DatasetManifest(views=views, samples=samples, resolution=resolution, root=root)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "views": [{"view_id": v.view_id, "class_set": list(v.class_set)} for v in manifest.views],
        "resolution": list(manifest.resolution),
        "samples": [
            {
                "id": s.sample_id,
                "split": s.split,
                "views": {
                    view_id: {
                        "frame_dir": s.frame_dirs[view_id],
                        "annotations": [
                            {"frame_index": a.frame_index, "masks": dict(a.mask_paths)}
                            for a in s.annotations[view_id]
                        ],
                    }
                    for view_id in s.frame_dirs
                },
            }
            for s in manifest.samples
        ],
    }


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------


def load_frame(path) -> np.ndarray:
    """Read one grayscale frame as float32 (1, H, W) in [0, 1]."""
    img = np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0
    return img[None]


def load_mask(path) -> np.ndarray:
    """Read one binary mask as float32 (H, W) with values {0, 1}."""
    img = np.asarray(Image.open(path).convert("L"), dtype=np.float32)
    return (img >= 128).astype(np.float32)


def frame_filename(t: int) -> str:
    return f"{t:05d}.png"


def mask_filename(t: int, cls: str) -> str:
    return f"{t:05d}_{cls}.png"


def _sorted_frame_paths(frame_dir: Path) -> list[Path]:
    paths = sorted(frame_dir.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no frames in {frame_dir}")
    return paths


def load_sample(manifest: DatasetManifest, record: SampleRecord) -> MultiViewVideoSample:
    """Materialize one sample's frames and annotation masks from disk."""
    frames: dict[str, np.ndarray] = {}
    annotations: dict[str, dict[int, np.ndarray]] = {}
    for view in manifest.views:
        view_id = view.view_id
        frame_dir = manifest.root / record.frame_dirs[view_id]
        stack = [load_frame(p) for p in _sorted_frame_paths(frame_dir)]
        frames[view_id] = np.stack(stack, axis=3)  # (1, H, W, T)
        per_frame: dict[int, np.ndarray] = {}
        for ann in record.annotations[view_id]:
            mask = np.stack(
                [load_mask(manifest.root / ann.mask_paths[cls]) for cls in view.class_set]
            )
            per_frame[ann.frame_index] = mask
        annotations[view_id] = per_frame
    return MultiViewVideoSample(
        patient_id=record.sample_id,
        views=manifest.views,
        frames=frames,
        annotations=annotations,
    )


# ---------------------------------------------------------------------------
# Operations on loaded samples
# ---------------------------------------------------------------------------


def annotated_pairs(sample: MultiViewVideoSample, view_id: str):
    """Return the view's (frame, mask) pairs in annotation-index order.

    frame is (C, H, W), mask is (C_classes, H, W). Raises KeyError if the view
    is absent from the sample.
    """
    if view_id not in sample.frames:
        raise KeyError(view_id)
    frames = sample.frames[view_id]
    return [
        (frames[..., t], mask)
        for t, mask in sorted(sample.annotations.get(view_id, {}).items())
    ]


def common_annotated_indices(sample: MultiViewVideoSample) -> list[int]:
    """Frame indices annotated in every view (aligned multi-view groups)."""
    sets = [set(sample.annotations.get(v.view_id, {})) for v in sample.views]
    common = set.intersection(*sets) if sets else set()
    return sorted(common)


def sample_clip(sample: MultiViewVideoSample, length: int, rng_seed: int) -> MultiViewVideoSample:
    """Crop all views to one random contiguous window of `length` frames.

    The window is identical across views and deterministic given rng_seed.
    Annotations inside the window are kept with re-indexed frame positions.
    """
    total = sample.num_frames
    if length > total:
        raise ValueError(f"clip length {length} exceeds video length {total}")
    rng = np.random.default_rng(rng_seed)
    start = int(rng.integers(0, total - length + 1))
    frames = {v: f[..., start : start + length] for v, f in sample.frames.items()}
    annotations = {
        view_id: {
            t - start: mask for t, mask in ann.items() if start <= t < start + length
        }
        for view_id, ann in sample.annotations.items()
    }
    return MultiViewVideoSample(
        patient_id=sample.patient_id,
        views=sample.views,
        frames=frames,
        annotations=annotations,
    )
