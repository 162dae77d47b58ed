"""Training configuration: defaults, invariants, TOML/JSON loading."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backbone import BackboneConfig
from .cycle import CycleConfig
from .errors import ConfigError
from .losses import LossWeights
from .model import MgfmSettings, MlfmSettings


@dataclass
class CycleSettings:
    """Cycle-loss block of the train config: CycleConfig plus an on/off flag."""

    enabled: bool = True
    chunk_size: int = 4
    temperature: float = 0.1
    similarity: str = "cosine"
    mode: str = "dense"
    random_split: bool = False

    def config(self) -> CycleConfig:
        return CycleConfig(
            chunk_size=self.chunk_size,
            temperature=self.temperature,
            similarity=self.similarity,
            mode=self.mode,
            random_split=self.random_split,
        )


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-5
    epochs: int = 100
    schedule: str = "cosine"  # "cosine" anneals to 0; "constant" holds lr
    labeled_batch: int = 8  # aligned multi-view annotated frame groups per step
    unlabeled_batch: int = 1  # unlabeled clips per step
    clip_length: int = 40
    resize: int = 144
    crop: int = 112
    rng_seed: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mgfm: MgfmSettings = field(default_factory=MgfmSettings)
    mlfm: MlfmSettings = field(default_factory=MlfmSettings)
    cycle: CycleSettings = field(default_factory=CycleSettings)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.labeled_batch < 1 or self.unlabeled_batch < 0:
            raise ConfigError("labeled_batch must be >= 1 and unlabeled_batch >= 0")
        if self.crop > self.resize:
            raise ConfigError(f"crop {self.crop} exceeds resize {self.resize}")
        if self.clip_length < 5 * self.cycle.chunk_size:
            raise ConfigError(
                f"clip_length {self.clip_length} < 5*chunk_size "
                f"{5 * self.cycle.chunk_size}; the template region would be too short"
            )
        if self.crop % self.backbone.stride:
            raise ConfigError(
                f"crop {self.crop} not divisible by backbone stride {self.backbone.stride}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "backbone": BackboneConfig,
    "mgfm": MgfmSettings,
    "mlfm": MlfmSettings,
    "cycle": CycleSettings,
    "loss": LossWeights,
}

# Sections doubling as ablation flags: a bare bool toggles `enabled`.
_FLAG_SECTIONS = ("mgfm", "mlfm", "cycle")


def config_from_dict(raw: dict) -> TrainConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"config document must be a table, got {type(raw).__name__}")
    kwargs: dict = {}
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            section = _SECTION_TYPES[key]
            if key in _FLAG_SECTIONS and isinstance(value, bool):
                kwargs[key] = section(enabled=value)
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be a table, got {value!r}")
            try:
                kwargs[key] = section(**value)
            except TypeError as exc:
                raise ConfigError(f"bad field in section {key!r}: {exc}") from exc
        else:
            kwargs[key] = value
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from exc


def load_train_config(path) -> TrainConfig:
    """Load a TrainConfig from a .toml or .json file (fields mirror the type)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".toml":
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    elif suffix == ".json":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    else:
        raise ConfigError(f"config file must be .toml or .json, got {path.name!r}")
    return config_from_dict(raw)


def save_train_config(config: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
