"""Temporal cycle loss: splitting, chunking, reconstruction, gradients."""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

import oracles
from echofuse.backbone import (
    BackboneConfig,
    ViewEncoder,
    ViewFeatureVolume,
    encode_view,
)
from echofuse.cycle import (
    CycleConfig,
    IntervalSet,
    chunk_intervals,
    cycle_back_accuracy,
    cycle_back_logits,
    dense_cycle_loss,
    frame_embeddings,
    soft_reconstruct,
    split_template_search,
)
from echofuse.data import load_sample


def _volume(values, view_id="v0"):
    return ViewFeatureVolume(values=values, view_id=view_id, stride=1)


def _random_volume(d=6, h=2, w=2, t=20, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return _volume(torch.randn(d, h, w, t, generator=gen, dtype=dtype))


@pytest.mark.parametrize("total,template,search", [(40, 16, 24), (5, 2, 3), (100, 40, 60)])
def test_split_is_two_to_three(total, template, search):
    volume = _random_volume(t=total)
    front, back = split_template_search(volume)
    assert front.shape[3] == template
    assert back.shape[3] == search
    torch.testing.assert_close(
        torch.cat([front, back], dim=3), volume.values, rtol=0, atol=0
    )


def test_split_needs_five_frames():
    with pytest.raises(ValueError):
        split_template_search(_random_volume(t=4))


def test_chunk_counts():
    volume = _random_volume(t=40)
    front, back = split_template_search(volume)
    template = chunk_intervals(front, 4, "template", "v0")
    search = chunk_intervals(back, 4, "search", "v0")
    assert len(template) == 4 and template.vectors.shape == (4, 6)
    assert len(search) == 6 and search.vectors.shape == (6, 6)
    assert template.region == "template" and search.region == "search"


def test_chunk_rejects_region_shorter_than_chunk():
    frames = torch.randn(6, 2, 2, 3)
    with pytest.raises(ValueError):
        chunk_intervals(frames, 4, "template", "v0")


def test_chunk_size_one_keeps_frame_embeddings():
    frames = torch.randn(6, 2, 2, 5)
    intervals = chunk_intervals(frames, 1, "search", "v0")
    torch.testing.assert_close(
        intervals.vectors, frame_embeddings(frames), rtol=0, atol=0
    )


def test_chunk_drops_trailing_remainder():
    frames = torch.randn(6, 2, 2, 7)
    intervals = chunk_intervals(frames, 2, "search", "v0")
    emb = frame_embeddings(frames)
    expected = torch.stack([emb[0:2].mean(0), emb[2:4].mean(0), emb[4:6].mean(0)])
    torch.testing.assert_close(intervals.vectors, expected, rtol=1e-6, atol=1e-7)


def test_reconstruct_from_identical_search_vectors():
    v = torch.tensor([1.0, -2.0, 0.5])
    search = IntervalSet(vectors=v.repeat(3, 1), region="search", view_id="v0")
    p_tilde = soft_reconstruct(torch.tensor([0.3, 0.3, 0.3]), search, CycleConfig())
    torch.testing.assert_close(p_tilde, v, rtol=1e-6, atol=1e-7)


def test_reconstruct_sharpens_to_nearest_at_low_temperature():
    search = IntervalSet(
        vectors=torch.tensor([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]]),
        region="search",
        view_id="v0",
    )
    p_k = torch.tensor([0.95, 0.05])
    p_tilde = soft_reconstruct(p_k, search, CycleConfig(temperature=1e-4))
    torch.testing.assert_close(
        p_tilde, torch.tensor([1.0, 0.0]), rtol=0, atol=1e-6
    )


def test_empty_search_rejected():
    empty = IntervalSet(vectors=torch.zeros(0, 3), region="search", view_id="v0")
    with pytest.raises(ValueError):
        soft_reconstruct(torch.zeros(3), empty, CycleConfig())


@pytest.mark.parametrize("similarity", ["cosine", "dot"])
def test_loss_matches_stepwise_reference(similarity):
    gen = torch.Generator().manual_seed(1)
    values = torch.randn(4, 2, 3, 15, generator=gen, dtype=torch.float64)
    config = CycleConfig(chunk_size=2, temperature=0.1, similarity=similarity)
    loss = dense_cycle_loss([_volume(values)], config)
    expected = oracles.cycle_loss_mean([values.numpy()], 2, 0.1, similarity)
    assert float(loss) == pytest.approx(expected, abs=1e-9)

    log_beta, n = cycle_back_logits(values, config)
    expected_per_k = oracles.cycle_losses(values.numpy(), 2, 0.1, similarity)
    np.testing.assert_allclose(
        (-torch.diagonal(log_beta)).numpy(), expected_per_k, rtol=0, atol=1e-9
    )


def test_multi_view_loss_averages_views():
    views = [_random_volume(seed=s, dtype=torch.float64) for s in (2, 3, 4)]
    config = CycleConfig(chunk_size=2)
    loss = dense_cycle_loss(views, config)
    expected = oracles.cycle_loss_mean([v.values.numpy() for v in views], 2, 0.1)
    assert float(loss) == pytest.approx(expected, abs=1e-9)


def test_identical_template_intervals_give_ln_n():
    # constant template block: every cycle-back row is uniform over n
    gen = torch.Generator().manual_seed(5)
    values = torch.randn(4, 2, 2, 20, generator=gen)
    values[..., :8] = values[..., :1]
    loss = dense_cycle_loss([_volume(values)], CycleConfig(chunk_size=2))
    assert float(loss) == pytest.approx(math.log(4), abs=1e-6)


def test_uniform_features_give_ln_n():
    views = [
        _volume(torch.full((4, 2, 2, 20), fill), view_id=f"v{i}")
        for i, fill in enumerate((1.0, 0.3, -2.0))
    ]
    loss = dense_cycle_loss(views, CycleConfig(chunk_size=2))
    assert float(loss) == pytest.approx(math.log(4), abs=1e-6)


def test_exactly_periodic_features_cycle_back():
    # frame t carries pattern[t mod 8]; with s=2 every template interval has
    # exact copies in the search region
    gen = torch.Generator().manual_seed(6)
    patterns = torch.randn(8, 8, generator=gen)
    values = torch.stack([patterns[t % 8] for t in range(20)], dim=1).reshape(8, 1, 1, 20)
    config = CycleConfig(chunk_size=2, temperature=0.01)
    assert cycle_back_accuracy([_volume(values)], config) == 1.0
    log_beta, n = cycle_back_logits(values, config)
    assert n == 4
    assert ((-torch.diagonal(log_beta)) < 0.05).all()


def test_cosine_loss_is_scale_invariant():
    values = _random_volume(seed=7).values
    config = CycleConfig(chunk_size=2)
    base = dense_cycle_loss([_volume(values)], config)
    scaled = dense_cycle_loss([_volume(values * 3.7)], config)
    assert float(scaled) == pytest.approx(float(base), abs=1e-6)


def test_gradients_are_finite():
    values = _random_volume(seed=8).values.requires_grad_(True)
    loss = dense_cycle_loss([_volume(values)], CycleConfig(chunk_size=2))
    loss.backward()
    assert torch.isfinite(values.grad).all()


def test_zero_features_keep_finite_gradients():
    values = torch.zeros(4, 2, 2, 10, requires_grad=True)
    loss = dense_cycle_loss([_volume(values)], CycleConfig(chunk_size=2))
    assert float(loss.detach()) == pytest.approx(math.log(2), abs=1e-6)
    loss.backward()
    assert torch.isfinite(values.grad).all()


def test_gradient_matches_finite_differences():
    torch.manual_seed(9)
    base = torch.randn(4, 1, 1, 10, dtype=torch.float64)
    config = CycleConfig(chunk_size=2, temperature=0.1)

    def loss_of(values):
        return dense_cycle_loss([_volume(values)], config)

    params = base.clone().requires_grad_(True)
    loss_of(params).backward()

    step = 1e-3
    flat = base.reshape(-1)
    grad = params.grad.reshape(-1)
    max_rel = 0.0
    for j in range(flat.numel()):
        plus, minus = base.clone(), base.clone()
        plus.reshape(-1)[j] += step
        minus.reshape(-1)[j] -= step
        fd = float(loss_of(plus) - loss_of(minus)) / (2 * step)
        denom = max(abs(fd), abs(float(grad[j])), 1e-8)
        max_rel = max(max_rel, abs(fd - float(grad[j])) / denom)
    assert max_rel < 1e-3


def test_single_mode_requires_rng():
    with pytest.raises(ValueError):
        dense_cycle_loss(
            [_random_volume()], CycleConfig(chunk_size=2, mode="single")
        )


def test_random_split_requires_rng():
    with pytest.raises(ValueError):
        dense_cycle_loss(
            [_random_volume()], CycleConfig(chunk_size=2, random_split=True)
        )


def test_single_mode_picks_one_replayable_term():
    volume = _random_volume(seed=10)
    config = CycleConfig(chunk_size=2, mode="single")
    loss = dense_cycle_loss([volume], config, rng=torch.Generator().manual_seed(5))

    log_beta, n = cycle_back_logits(volume.values, CycleConfig(chunk_size=2))
    k = int(torch.randint(0, n, (1,), generator=torch.Generator().manual_seed(5)))
    assert float(loss) == pytest.approx(float(-torch.diagonal(log_beta)[k]), abs=1e-7)


def test_random_split_is_a_cyclic_roll():
    volume = _random_volume(seed=11)
    t = volume.values.shape[3]
    config = CycleConfig(chunk_size=2, random_split=True)
    loss = dense_cycle_loss([volume], config, rng=torch.Generator().manual_seed(8))

    shift = int(torch.randint(0, t, (1,), generator=torch.Generator().manual_seed(8)))
    rolled = _volume(torch.roll(volume.values, shifts=-shift, dims=3))
    expected = dense_cycle_loss([rolled], CycleConfig(chunk_size=2))
    assert float(loss) == pytest.approx(float(expected), abs=1e-7)


def test_empty_view_list_rejected():
    with pytest.raises(ValueError):
        dense_cycle_loss([], CycleConfig())


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(chunk_size=0),
        dict(temperature=0.0),
        dict(similarity="euclidean"),
        dict(mode="triple"),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        CycleConfig(**kwargs)


def _pixel_embedding_volume(sample, view_id):
    """Per-frame standardized 16x16 pixel embeddings as a (256, 1, 1, T) volume."""
    frames = torch.from_numpy(sample.frames[view_id])
    t = frames.shape[-1]
    small = F.interpolate(
        frames.permute(3, 0, 1, 2), size=(16, 16), mode="bilinear", align_corners=False
    )
    emb = small.reshape(t, 256)
    emb = (emb - emb.mean(dim=1, keepdim=True)) / (emb.std(dim=1, keepdim=True) + 1e-8)
    return _volume(emb.transpose(0, 1).reshape(256, 1, 1, t), view_id=view_id)


def test_noiseless_heartbeat_cycles_back(noiseless_manifest):
    sample = load_sample(noiseless_manifest, noiseless_manifest.split_samples("train")[0])
    volume = _pixel_embedding_volume(sample, "A4C")
    config = CycleConfig(chunk_size=2, temperature=0.01)
    assert cycle_back_accuracy([volume], config) == 1.0
    aligned = float(dense_cycle_loss([volume], config))
    assert aligned < 0.05

    perm = torch.randperm(20, generator=torch.Generator().manual_seed(9))
    shuffled = _volume(volume.values[..., perm], view_id="A4C")
    assert float(dense_cycle_loss([shuffled], config)) > aligned + 0.5


def test_cycle_loss_alone_trains_an_encoder(noiseless_manifest):
    records = noiseless_manifest.split_samples("train")
    train_sample = load_sample(noiseless_manifest, records[0])
    held_sample = load_sample(noiseless_manifest, records[1])
    views = ("PLVLA", "LVSA", "A4C")

    torch.manual_seed(0)
    encoder = ViewEncoder(BackboneConfig(channels=16, stride=4, depth=2))
    config = CycleConfig(chunk_size=2, temperature=0.1)

    def volumes(sample):
        return [
            encode_view(torch.from_numpy(sample.frames[v]), v, encoder) for v in views
        ]

    with torch.no_grad():
        held_before = float(dense_cycle_loss(volumes(held_sample), config))
    assert held_before == pytest.approx(math.log(4), abs=1e-3)

    optimizer = torch.optim.Adam(encoder.parameters(), lr=1e-2)
    for _ in range(200):
        optimizer.zero_grad()
        loss = dense_cycle_loss(volumes(train_sample), config)
        loss.backward()
        optimizer.step()

    with torch.no_grad():
        held_after = float(dense_cycle_loss(volumes(held_sample), config))
        train_accuracy = cycle_back_accuracy(volumes(train_sample), config)
    assert train_accuracy == 1.0
    assert held_after < held_before - 0.3
