"""Deterministic synthetic multi-view cardiac phantom.

Renders periodically pulsating chambers into three view geometries with
speckle noise, so the whole pipeline can run without real patient data:

  * PLVLA - two stacked ellipses (LV above RV),
  * LVSA  - central LV disk inside a concentric RV ring,
  * A4C   - 2x2 chamber grid (LV, RV over LA, RA).

Chamber areas pulse sinusoidally with cardiac phase (maximal at phase 0,
contracted at phase 0.5). Frames show chambers as dark interiors with bright
borders on a mid-gray background plus multiplicative speckle; masks are the
exact noiseless interiors. Every video derives a child seed from
(rng_seed, video index), so parallel and serial generation match.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .data import (
    DEFAULT_VIEWS,
    AnnotationRecord,
    DatasetManifest,
    SampleRecord,
    ViewSpec,
    frame_filename,
    load_manifest,
    mask_filename,
)

BACKGROUND_LEVEL = 0.45
INTERIOR_LEVEL = 0.15
BORDER_LEVEL = 0.90
BORDER_FRACTION = 0.10  # border thickness as a fraction of the elliptic radius


@dataclass(frozen=True)
class ChamberShape:
    """One chamber as a (possibly annular) rotated ellipse in relative units."""

    cls: str
    center: tuple[float, float]  # (cy, cx) in [0, 1]
    axes: tuple[float, float]  # semi-axes (ay, ax) in [0, 1]
    angle: float = 0.0  # radians
    hole_axes: tuple[float, float] | None = None  # concentric cutout (annulus)


@dataclass
class PhantomState:
    """Per-view chamber layouts plus the shared pulsation amplitude."""

    chambers: dict[str, tuple[ChamberShape, ...]]  # view_id -> shapes
    contraction: float = 0.35  # area(phase 0.5) = (1 - contraction) * area(phase 0)

    def area_scale(self, phase: float) -> float:
        return 1.0 - self.contraction * (1.0 - math.cos(2.0 * math.pi * phase)) / 2.0


@dataclass
class PhantomConfig:
    num_videos: dict[str, int] = field(
        default_factory=lambda: {"train": 254, "val": 2, "test": 8}
    )
    frames_per_video: int = 100
    period: int = 30
    resolution: tuple[int, int] = (144, 144)
    annotated_frames_per_video: int = 5
    speckle_noise: float = 0.3
    contraction: float = 0.35
    annotation_placement: str = "uniform"  # or "phase"
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.frames_per_video > self.period >= 4):
            raise ValueError(
                f"need frames_per_video > period >= 4, got "
                f"T={self.frames_per_video}, period={self.period}"
            )
        if self.annotated_frames_per_video > self.frames_per_video:
            raise ValueError("annotated_frames_per_video exceeds frames_per_video")
        if not 0.0 <= self.speckle_noise <= 1.0:
            raise ValueError("speckle_noise must lie in [0, 1]")
        if self.annotation_placement not in ("uniform", "phase"):
            raise ValueError(f"unknown annotation_placement {self.annotation_placement!r}")


def load_phantom_config(path) -> PhantomConfig:
    """Read a PhantomConfig from a JSON document mirroring the field names."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    kwargs = {}
    for key, value in doc.items():
        if key == "resolution":
            value = tuple(int(x) for x in value)
        kwargs[key] = value
    return PhantomConfig(**kwargs)


def cardiac_phase(t: int, period: float, phase_offset: float = 0.0) -> float:
    """Map a frame index to cardiac phase in [0, 1); exactly periodic in t."""
    if period <= 0:
        raise ValueError(f"period must be positive, got {period}")
    return float((t + phase_offset) / period % 1.0)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

_BASE_LAYOUT = {
    "PLVLA": (
        ChamberShape("LV", center=(0.34, 0.50), axes=(0.15, 0.24), angle=0.12),
        ChamberShape("RV", center=(0.72, 0.50), axes=(0.11, 0.21), angle=-0.10),
    ),
    "LVSA": (
        ChamberShape("LV", center=(0.50, 0.50), axes=(0.13, 0.13)),
        ChamberShape("RV", center=(0.50, 0.50), axes=(0.32, 0.32), hole_axes=(0.21, 0.21)),
    ),
    "A4C": (
        ChamberShape("LV", center=(0.30, 0.31), axes=(0.14, 0.13), angle=0.10),
        ChamberShape("RV", center=(0.30, 0.70), axes=(0.13, 0.12), angle=-0.08),
        ChamberShape("LA", center=(0.71, 0.31), axes=(0.12, 0.12)),
        ChamberShape("RA", center=(0.71, 0.70), axes=(0.12, 0.11)),
    ),
}


def default_phantom_state(contraction: float = 0.35, rng: np.random.Generator | None = None) -> PhantomState:
    """Build a phantom state, optionally jittering the base layout per video."""
    chambers: dict[str, tuple[ChamberShape, ...]] = {}
    for view_id, shapes in _BASE_LAYOUT.items():
        jittered = []
        for shape in shapes:
            if rng is None:
                jittered.append(shape)
                continue
            dy, dx = rng.uniform(-0.02, 0.02, size=2)
            scale = rng.uniform(0.92, 1.08)
            dang = rng.uniform(-0.12, 0.12)
            jittered.append(
                replace(
                    shape,
                    center=(shape.center[0] + dy, shape.center[1] + dx),
                    axes=(shape.axes[0] * scale, shape.axes[1] * scale),
                    angle=shape.angle + dang,
                    hole_axes=None
                    if shape.hole_axes is None
                    else (shape.hole_axes[0] * scale, shape.hole_axes[1] * scale),
                )
            )
        chambers[view_id] = tuple(jittered)
    return PhantomState(chambers=chambers, contraction=contraction)


def _elliptic_radius(h: int, w: int, shape: ChamberShape, axes: tuple[float, float]) -> np.ndarray:
    """Normalized elliptic radius field: < 1 inside, 1 on the ellipse."""
    ys = (np.arange(h, dtype=np.float64)[:, None] + 0.5) / h
    xs = (np.arange(w, dtype=np.float64)[None, :] + 0.5) / w
    dy = ys - shape.center[0]
    dx = xs - shape.center[1]
    cos_a, sin_a = math.cos(shape.angle), math.sin(shape.angle)
    u = cos_a * dy + sin_a * dx
    v = -sin_a * dy + cos_a * dx
    return np.sqrt((u / axes[0]) ** 2 + (v / axes[1]) ** 2)


def _chamber_fields(h: int, w: int, shape: ChamberShape, area_scale: float):
    """Interior and border boolean masks for one chamber at one phase."""
    s = math.sqrt(area_scale)
    axes = (shape.axes[0] * s, shape.axes[1] * s)
    if min(axes) <= 0:
        raise ValueError("chamber semi-axes collapsed to zero")
    r_outer = _elliptic_radius(h, w, shape, axes)
    if shape.hole_axes is None:
        interior = r_outer <= 1.0
        border = (r_outer > 1.0) & (r_outer <= 1.0 + BORDER_FRACTION)
    else:
        hole = (shape.hole_axes[0] * s, shape.hole_axes[1] * s)
        r_hole = _elliptic_radius(h, w, shape, hole)
        interior = (r_outer <= 1.0) & (r_hole > 1.0)
        border = ((r_outer > 1.0) & (r_outer <= 1.0 + BORDER_FRACTION)) | (
            (r_hole <= 1.0) & (r_hole > 1.0 - BORDER_FRACTION)
        )
    return interior, border


def render_view(
    state: PhantomState,
    phase: float,
    view_spec: ViewSpec,
    resolution: tuple[int, int],
    noise_level: float,
    rng_seed: int,
):
    """Render one frame and its per-class masks for one view at one phase.

    Returns (frame, masks): frame float64 (H, W) in [0, 1], masks float64
    (C_classes, H, W) in class_set order, exactly the noiseless interiors.
    """
    if view_spec.view_id not in state.chambers:
        raise ValueError(f"unknown view {view_spec.view_id!r}")
    if not 0.0 <= phase < 1.0:
        raise ValueError(f"phase must lie in [0, 1), got {phase}")
    h, w = resolution
    scale = state.area_scale(phase)
    frame = np.full((h, w), BACKGROUND_LEVEL, dtype=np.float64)
    by_class = {}
    fields = [
        (shape, *_chamber_fields(h, w, shape, scale))
        for shape in state.chambers[view_spec.view_id]
    ]
    for _, _, border in fields:
        frame[border] = BORDER_LEVEL
    for shape, interior, _ in fields:
        frame[interior] = INTERIOR_LEVEL
        by_class[shape.cls] = interior
    if noise_level > 0:
        rng = np.random.default_rng(rng_seed)
        speckle = rng.uniform(-1.0, 1.0, size=frame.shape)
        frame = np.clip(frame * (1.0 + noise_level * speckle), 0.0, 1.0)
    masks = np.stack([by_class[cls].astype(np.float64) for cls in view_spec.class_set])
    return frame, masks


def _check_disjoint(state: PhantomState, resolution: tuple[int, int]) -> None:
    """Chamber interiors within each view must never overlap (checked at phase 0)."""
    for view_id, shapes in state.chambers.items():
        total = np.zeros(resolution, dtype=np.int32)
        for shape in shapes:
            interior, _ = _chamber_fields(*resolution, shape, state.area_scale(0.0))
            total += interior
        if (total > 1).any():
            raise ValueError(f"chamber interiors overlap in view {view_id}")


# ---------------------------------------------------------------------------
# Annotation placement
# ---------------------------------------------------------------------------


def _uniform_indices(total: int, count: int) -> list[int]:
    return sorted({int(round(x)) for x in np.linspace(0, total - 1, count)})


def _phase_indices(total: int, count: int, period: float, offset: float) -> list[int]:
    """Frames nearest end-diastole (phase 0) / end-systole (phase 0.5), alternating."""
    phases = np.array([cardiac_phase(t, period, offset) for t in range(total)])
    picks: list[int] = []
    num_cycles = max(1, int(total // period))
    for k in range(count):
        target = 0.0 if k % 2 == 0 else 0.5
        cycle = (k // 2) % num_cycles
        lo, hi = int(cycle * period), min(total, int((cycle + 1) * period))
        dist = np.minimum(np.abs(phases[lo:hi] - target), 1.0 - np.abs(phases[lo:hi] - target))
        picks.append(lo + int(np.argmin(dist)))
    picks = sorted(set(picks))
    # top up with uniform picks if targets collided
    for idx in _uniform_indices(total, count):
        if len(picks) >= count:
            break
        if idx not in picks:
            picks.append(idx)
    return sorted(picks)[:count]


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------


def _save_gray(path: Path, values: np.ndarray) -> None:
    img = Image.fromarray(np.round(values * 255.0).astype(np.uint8), mode="L")
    img.save(path)


def _video_plan(config: PhantomConfig) -> list[tuple[str, str]]:
    """Stable (sample_id, split) list; full videos split val:test per config."""
    plan = []
    index = 0
    for split in ("train", "val", "test"):
        for _ in range(config.num_videos.get(split, 0)):
            plan.append((f"vid_{index:04d}", split))
            index += 1
    return plan


def generate_dataset(config: PhantomConfig, out_dir) -> DatasetManifest:
    """Render the phantom dataset and write manifest, frames and masks.

    Train videos carry sparse annotations (N frames); val/test videos are
    fully annotated. Identical seeds produce byte-identical output.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = config.resolution
    total = config.frames_per_video
    records: list[SampleRecord] = []

    for video_index, (sample_id, split) in enumerate(_video_plan(config)):
        seed_seq = np.random.SeedSequence([config.rng_seed, video_index])
        rng = np.random.default_rng(seed_seq)
        state = default_phantom_state(config.contraction, rng)
        _check_disjoint(state, config.resolution)
        offset = float(rng.uniform(0.0, config.period))
        noise_root = int(rng.integers(0, 2**31 - 1))

        if split == "train":
            if config.annotation_placement == "uniform":
                annotated = _uniform_indices(total, config.annotated_frames_per_video)
            else:
                annotated = _phase_indices(
                    total, config.annotated_frames_per_video, config.period, offset
                )
        else:
            annotated = list(range(total))

        frame_dirs: dict[str, str] = {}
        annotations: dict[str, tuple[AnnotationRecord, ...]] = {}
        for view_index, view in enumerate(DEFAULT_VIEWS):
            frame_rel = f"frames/{sample_id}/{view.view_id}"
            mask_rel = f"masks/{sample_id}/{view.view_id}"
            (out_dir / frame_rel).mkdir(parents=True, exist_ok=True)
            (out_dir / mask_rel).mkdir(parents=True, exist_ok=True)
            frame_dirs[view.view_id] = frame_rel
            ann_records = []
            for t in range(total):
                phase = cardiac_phase(t, config.period, offset)
                frame, masks = render_view(
                    state,
                    phase,
                    view,
                    config.resolution,
                    config.speckle_noise,
                    rng_seed=noise_root + 1000 * view_index + t,
                )
                _save_gray(out_dir / frame_rel / frame_filename(t), frame)
                if t in annotated:
                    mask_paths = {}
                    for ci, cls in enumerate(view.class_set):
                        rel = f"{mask_rel}/{mask_filename(t, cls)}"
                        _save_gray(out_dir / rel, masks[ci])
                        mask_paths[cls] = rel
                    ann_records.append(AnnotationRecord(t, mask_paths))
            annotations[view.view_id] = tuple(ann_records)
        records.append(SampleRecord(sample_id, split, frame_dirs, annotations))

    manifest = DatasetManifest(
        views=DEFAULT_VIEWS, samples=records, resolution=(h, w), root=out_dir
    )
    from .data import save_manifest

    save_manifest(manifest, out_dir / "manifest.json")
    return load_manifest(out_dir / "manifest.json")
