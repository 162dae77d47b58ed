"""Full multi-view model: fusion paths, combination, checkpoints."""

import copy

import pytest
import torch

from echofuse.backbone import BackboneConfig, decode_view, encode_view
from echofuse.data import DEFAULT_VIEWS
from echofuse.errors import CheckpointFormatError, ConfigError
from echofuse.model import (
    CHECKPOINT_FORMAT,
    MgfmSettings,
    MlfmSettings,
    MultiViewSegmenter,
    build_model,
    load_checkpoint,
    model_config_dict,
    save_checkpoint,
)

BACKBONE = BackboneConfig(channels=16, stride=4, depth=2)


def _frames(h=32, w=32, t=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return {
        v.view_id: torch.rand(1, h, w, t, generator=gen) for v in DEFAULT_VIEWS
    }


def _model(seed=0, **kwargs):
    torch.manual_seed(seed)
    return MultiViewSegmenter(DEFAULT_VIEWS, backbone=BACKBONE, **kwargs)


def test_forward_shapes():
    model = _model()
    output = model(_frames())
    assert set(output.logits) == {"PLVLA", "LVSA", "A4C"}
    assert output.logits["PLVLA"].shape == (2, 32, 32, 4)
    assert output.logits["LVSA"].shape == (2, 32, 32, 4)
    assert output.logits["A4C"].shape == (4, 32, 32, 4)
    assert [v.view_id for v in output.fused_global] == ["PLVLA", "LVSA", "A4C"]
    for volume in output.fused_global:
        assert volume.values.shape == (16, 8, 8, 4)
    assert output.pseudo_logits["A4C"].shape == (4, 32, 32, 4)
    assert output.center_logits["A4C"].shape == (4, 32, 32, 4)
    for logits in output.logits.values():
        assert torch.isfinite(logits).all()


def test_all_fusion_off_is_independent_single_view_networks():
    model = _model(
        mgfm=MgfmSettings(enabled=False), mlfm=MlfmSettings(enabled=False)
    )
    frames = _frames(seed=1)
    output = model(frames)
    assert output.pseudo_logits == {} and output.center_logits == {}
    for view in DEFAULT_VIEWS:
        volume = encode_view(frames[view.view_id], view.view_id, model.encoders[view.view_id])
        expected = decode_view(volume, view.view_id, model.decoders[view.view_id]).logits
        torch.testing.assert_close(output.logits[view.view_id], expected, rtol=0, atol=0)
        # disabled fusion passes features through untouched
    for volume, view in zip(output.fused_global, DEFAULT_VIEWS):
        torch.testing.assert_close(
            volume.values, output.features[view.view_id].values, rtol=0, atol=0
        )


def test_global_fusion_is_identity_at_initialization():
    model = _model(mlfm=MlfmSettings(enabled=False))
    output = model(_frames(seed=2))
    for volume, view in zip(output.fused_global, DEFAULT_VIEWS):
        torch.testing.assert_close(
            volume.values, output.features[view.view_id].values, rtol=0, atol=1e-6
        )


def test_local_only_path_populates_pseudo_and_center():
    model = _model(mgfm=MgfmSettings(enabled=False))
    assert not hasattr(model, "global_fusion")
    output = model(_frames(seed=3))
    assert set(output.pseudo_logits) == {"PLVLA", "LVSA", "A4C"}
    assert set(output.center_logits) == {"PLVLA", "LVSA", "A4C"}
    for logits in output.logits.values():
        assert torch.isfinite(logits).all()


def test_concat_project_combination():
    model = _model(mlfm=MlfmSettings(combine="concat-project"))
    assert model.combine_proj.in_features == 32
    assert model.combine_proj.out_features == 16
    output = model(_frames(seed=4))
    assert output.logits["A4C"].shape == (4, 32, 32, 4)
    assert torch.isfinite(output.logits["A4C"]).all()


def test_unbounded_mask_variant_runs():
    model = _model(mlfm=MlfmSettings(variant="unbounded"))
    output = model(_frames(seed=5))
    for logits in output.logits.values():
        assert torch.isfinite(logits).all()


def test_bad_settings_rejected():
    with pytest.raises(ConfigError):
        MlfmSettings(variant="squared")
    with pytest.raises(ConfigError):
        MlfmSettings(combine="stack")


def test_detach_pseudo_changes_gradients_not_values():
    frames = _frames(seed=6)
    attached = _model(seed=7)
    detached = _model(seed=7, mlfm=MlfmSettings(detach_pseudo=True))
    detached.load_state_dict(attached.state_dict())

    out_a = attached(frames)
    out_d = detached(frames)
    for view_id in out_a.logits:
        torch.testing.assert_close(
            out_d.logits[view_id], out_a.logits[view_id], rtol=0, atol=0
        )

    sum(l.sum() for l in out_a.logits.values()).backward()
    sum(l.sum() for l in out_d.logits.values()).backward()
    grads_differ = False
    for (name_a, p_a), (_, p_d) in zip(
        attached.named_parameters(), detached.named_parameters()
    ):
        if p_a.grad is None or p_d.grad is None:
            continue
        if not torch.allclose(p_a.grad, p_d.grad, atol=1e-9):
            grads_differ = True
            break
    assert grads_differ


def test_forward_features_matches_full_forward():
    model = _model(seed=8)
    frames = _frames(seed=8)
    features, fused = model.forward_features(frames)
    output = model(frames)
    for got, expected in zip(fused, output.fused_global):
        torch.testing.assert_close(got.values, expected.values, rtol=0, atol=0)
    for volume, view in zip(features, DEFAULT_VIEWS):
        torch.testing.assert_close(
            volume.values, output.features[view.view_id].values, rtol=0, atol=0
        )


def test_checkpoint_round_trip(tmp_path):
    model = _model(seed=9)
    frames = _frames(seed=9)
    with torch.no_grad():
        before = model(frames).logits
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model, extra={"epoch": 3, "val_dice": 0.5})
    loaded, extra = load_checkpoint(path)
    assert extra == {"epoch": 3, "val_dice": 0.5}
    assert not loaded.training
    with torch.no_grad():
        after = loaded(frames).logits
    for view_id in before:
        torch.testing.assert_close(
            after[view_id], before[view_id], rtol=0, atol=1e-9
        )


def test_checkpoint_format_tag_checked(tmp_path):
    path = tmp_path / "wrong.ckpt"
    torch.save({"format": "other/9", "state_dict": {}}, path)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    garbage = tmp_path / "garbage.ckpt"
    garbage.write_text("not a checkpoint")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(garbage)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_checkpoint_state_mismatch_rejected(tmp_path):
    model = _model(seed=10)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    payload["model_config"]["backbone"]["channels"] = 32
    torch.save(payload, path)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_build_model_reproduces_architecture():
    model = _model(
        seed=11,
        mgfm=MgfmSettings(heads=2, layers=2),
        mlfm=MlfmSettings(combine="concat-project"),
    )
    clone = build_model(copy.deepcopy(model_config_dict(model)))
    assert set(clone.state_dict()) == set(model.state_dict())
    assert clone.mgfm == model.mgfm
    assert clone.mlfm == model.mlfm
    assert [v.view_id for v in clone.views] == [v.view_id for v in model.views]
