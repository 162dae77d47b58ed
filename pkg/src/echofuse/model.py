"""Full multi-view segmentation network.

Per-view encoders feed two fusion paths: the global path stacks all views and
applies view-wise attention; the local path decodes pseudo labels and center
weights from the pre-fusion features, builds local feature masks, scales the
features, and fuses them with an independent attention block. The two fused
volumes are combined (sum by default) and decoded per view; the decoder is
shared between the pseudo-label pass and the final pass. The globally fused
per-view volumes also feed the cycle loss.

Either fusion path can be disabled, in which case it degrades to an identity
pass-through of the per-view features; with both disabled the model reduces
to independent single-view networks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .backbone import (
    BackboneConfig,
    SegmentationOutput,
    ViewDecoder,
    ViewEncoder,
    ViewFeatureVolume,
    center_head,
    decode_view,
    encode_view,
)
from .data import ViewSpec
from .errors import CheckpointFormatError, ConfigError
from .global_fusion import (
    AttentionConfig,
    GlobalFusion,
    StackedViews,
    ViewWiseAttention,
    view_concat,
    unstack_views,
)
from .local_fusion import MASK_VARIANTS, apply_local_fusion, compute_feature_mask

CHECKPOINT_FORMAT = "echofuse-checkpoint/1"


@dataclass
class MgfmSettings:
    enabled: bool = True
    layers: int = 1
    heads: int = 1
    key_dim: int | None = None
    temperature: float | None = None
    residual: bool = True

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(
            key_dim=self.key_dim,
            heads=self.heads,
            temperature=self.temperature,
            residual=self.residual,
        )


@dataclass
class MlfmSettings:
    enabled: bool = True
    variant: str = "literal"
    combine: str = "sum"  # or "concat-project"
    detach_pseudo: bool = False

    def __post_init__(self):
        if self.variant not in MASK_VARIANTS:
            raise ConfigError(f"unknown mlfm variant {self.variant!r}")
        if self.combine not in ("sum", "concat-project"):
            raise ConfigError(f"unknown mlfm combine {self.combine!r}")


@dataclass
class ModelOutput:
    logits: dict[str, torch.Tensor]  # view -> (C_view, H, W, T)
    fused_global: list[ViewFeatureVolume]  # per-view, feeds the cycle loss
    features: dict[str, ViewFeatureVolume]  # pre-fusion encoder outputs
    pseudo_logits: dict[str, torch.Tensor] = field(default_factory=dict)
    center_logits: dict[str, torch.Tensor] = field(default_factory=dict)


class MultiViewSegmenter(nn.Module):
    def __init__(
        self,
        views: tuple[ViewSpec, ...],
        backbone: BackboneConfig | None = None,
        mgfm: MgfmSettings | None = None,
        mlfm: MlfmSettings | None = None,
    ):
        super().__init__()
        self.views = tuple(views)
        self.backbone_config = backbone or BackboneConfig()
        self.mgfm = mgfm or MgfmSettings()
        self.mlfm = mlfm or MlfmSettings()
        channels = self.backbone_config.channels

        self.encoders = nn.ModuleDict(
            {v.view_id: ViewEncoder(self.backbone_config) for v in self.views}
        )
        self.decoders = nn.ModuleDict(
            {v.view_id: ViewDecoder(self.backbone_config, len(v.class_set)) for v in self.views}
        )
        self.center_heads = nn.ModuleDict(
            {v.view_id: ViewDecoder(self.backbone_config, len(v.class_set)) for v in self.views}
        )
        if self.mgfm.enabled:
            self.global_fusion = GlobalFusion(
                channels, self.mgfm.attention_config(), layers=self.mgfm.layers
            )
        if self.mlfm.enabled:
            self.local_attention = ViewWiseAttention(channels, self.mgfm.attention_config())
            if self.mlfm.combine == "concat-project":
                self.combine_proj = nn.Linear(2 * channels, channels)

    # -- forward passes ----------------------------------------------------

    def encode_all(self, frames: dict[str, torch.Tensor]) -> list[ViewFeatureVolume]:
        return [
            encode_view(frames[v.view_id], v.view_id, self.encoders[v.view_id])
            for v in self.views
        ]

    def fuse_global(self, features: list[ViewFeatureVolume]) -> StackedViews:
        stacked = view_concat(features)
        if self.mgfm.enabled:
            stacked = self.global_fusion(stacked)
        return stacked

    def forward_features(self, frames: dict[str, torch.Tensor]):
        """Encoder + global fusion only (the semi-supervised path)."""
        features = self.encode_all(frames)
        fused = self.fuse_global(features)
        return features, unstack_views(fused, self.backbone_config.stride)

    def _combine(self, global_values: torch.Tensor, local_values: torch.Tensor) -> torch.Tensor:
        if self.mlfm.combine == "sum":
            return global_values + local_values
        both = torch.cat([global_values, local_values], dim=0)  # (2D, V, h, w, T)
        out = self.combine_proj(both.permute(1, 2, 3, 4, 0))
        return out.permute(4, 0, 1, 2, 3)

    def forward(self, frames: dict[str, torch.Tensor]) -> ModelOutput:
        features = self.encode_all(frames)
        fused_global = self.fuse_global(features)

        pseudo: dict[str, torch.Tensor] = {}
        centers: dict[str, torch.Tensor] = {}
        if self.mlfm.enabled:
            grid = tuple(features[0].values.shape[1:3])
            masks = []
            for volume, view in zip(features, self.views):
                pseudo_out = decode_view(volume, view.view_id, self.decoders[view.view_id])
                center_logits = center_head(volume, view.view_id, self.center_heads[view.view_id])
                pseudo[view.view_id] = pseudo_out.logits
                centers[view.view_id] = center_logits
                mask_source = pseudo_out.logits.detach() if self.mlfm.detach_pseudo else pseudo_out.logits
                masks.append(
                    compute_feature_mask(
                        SegmentationOutput(mask_source, view.view_id),
                        center_logits,
                        grid,
                        self.mlfm.variant,
                    )
                )
            fused_local = apply_local_fusion(features, masks, self.local_attention)
            combined_values = self._combine(fused_global.values, fused_local.values)
        else:
            combined_values = fused_global.values

        combined = StackedViews(values=combined_values, view_ids=fused_global.view_ids)
        per_view = unstack_views(combined, self.backbone_config.stride)
        logits = {
            v.view_id: decode_view(vol, v.view_id, self.decoders[v.view_id]).logits
            for v, vol in zip(self.views, per_view)
        }
        return ModelOutput(
            logits=logits,
            fused_global=unstack_views(fused_global, self.backbone_config.stride),
            features={v.view_id: vol for v, vol in zip(self.views, features)},
            pseudo_logits=pseudo,
            center_logits=centers,
        )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def model_config_dict(model: MultiViewSegmenter) -> dict:
    return {
        "views": [{"view_id": v.view_id, "class_set": list(v.class_set)} for v in model.views],
        "backbone": asdict(model.backbone_config),
        "mgfm": asdict(model.mgfm),
        "mlfm": asdict(model.mlfm),
    }


def build_model(config: dict) -> MultiViewSegmenter:
    views = tuple(ViewSpec(v["view_id"], tuple(v["class_set"])) for v in config["views"])
    return MultiViewSegmenter(
        views=views,
        backbone=BackboneConfig(**config["backbone"]),
        mgfm=MgfmSettings(**config["mgfm"]),
        mlfm=MlfmSettings(**config["mlfm"]),
    )


def save_checkpoint(path, model: MultiViewSegmenter, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model_config_dict(model),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (model, extra dict)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(
            f"checkpoint {path} has format {payload.get('format')!r}; "
            f"expected {CHECKPOINT_FORMAT!r}"
        )
    model = build_model(payload["model_config"])
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as exc:
        raise CheckpointFormatError(f"checkpoint/config mismatch: {exc}") from exc
    model.eval()
    return model, payload.get("extra", {})
