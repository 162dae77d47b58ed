"""Shared fixtures: phantom datasets at several scales and one trained run.

The expensive fixtures are session-scoped so the training-dependent tests
(acceptance end-to-end, center-head geometry, evaluation round-trips) share
a single run.
"""

from __future__ import annotations

import pytest

from echofuse.backbone import BackboneConfig
from echofuse.config import CycleSettings, TrainConfig
from echofuse.data import load_manifest
from echofuse.phantom import PhantomConfig, generate_dataset
from echofuse.train import train


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Small fast dataset for data-plumbing and smoke tests."""
    config = PhantomConfig(
        num_videos={"train": 3, "val": 1, "test": 1},
        frames_per_video=12,
        period=6,
        resolution=(48, 48),
        annotated_frames_per_video=3,
        speckle_noise=0.3,
        rng_seed=7,
    )
    out = tmp_path_factory.mktemp("phantom_tiny")
    return generate_dataset(config, out)


@pytest.fixture(scope="session")
def noiseless_manifest(tmp_path_factory):
    """Exactly periodic clean dataset for geometric and cycle-loss oracles."""
    config = PhantomConfig(
        num_videos={"train": 2, "val": 1, "test": 1},
        frames_per_video=20,
        period=8,
        resolution=(32, 32),
        annotated_frames_per_video=5,
        speckle_noise=0.0,
        rng_seed=3,
    )
    out = tmp_path_factory.mktemp("phantom_clean")
    return generate_dataset(config, out)


E2E_PHANTOM = dict(
    num_videos={"train": 16, "val": 2, "test": 4},
    frames_per_video=30,
    period=10,
    resolution=(64, 64),
    annotated_frames_per_video=5,
    speckle_noise=0.25,
    rng_seed=11,
)


def e2e_train_config(**overrides) -> TrainConfig:
    kwargs = dict(
        learning_rate=1e-3,
        epochs=30,
        labeled_batch=8,
        unlabeled_batch=1,
        clip_length=20,
        resize=64,
        crop=56,
        rng_seed=0,
        backbone=BackboneConfig(channels=32, stride=4, depth=2),
        cycle=CycleSettings(chunk_size=2),
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


@pytest.fixture(scope="session")
def e2e_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantom_e2e")
    return generate_dataset(PhantomConfig(**E2E_PHANTOM), out)


@pytest.fixture(scope="session")
def e2e_run(e2e_manifest, tmp_path_factory):
    """Full-configuration training run shared by the end-to-end tests."""
    out = tmp_path_factory.mktemp("e2e_run")
    report = train(e2e_train_config(), e2e_manifest, out, seed=0, quiet=True)
    return report, e2e_manifest, out


MICRO_PHANTOM = dict(
    num_videos={"train": 8, "val": 1, "test": 3},
    frames_per_video=20,
    period=8,
    resolution=(32, 32),
    annotated_frames_per_video=5,
    speckle_noise=0.5,
    rng_seed=5,
)


def micro_train_config(**overrides) -> TrainConfig:
    kwargs = dict(
        learning_rate=1e-3,
        epochs=40,
        labeled_batch=8,
        unlabeled_batch=1,
        clip_length=10,
        resize=32,
        crop=28,
        rng_seed=100,
        backbone=BackboneConfig(channels=16, stride=4, depth=2),
        cycle=CycleSettings(chunk_size=2),
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


@pytest.fixture(scope="session")
def micro_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantom_micro")
    return generate_dataset(PhantomConfig(**MICRO_PHANTOM), out)
