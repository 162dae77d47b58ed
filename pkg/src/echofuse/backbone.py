"""Per-view encoder/decoder backbone.

Each view owns an independent (non-shared) compact residual convolutional
encoder producing a feature volume at a configurable stride, a decoder that
maps features back to per-class segmentation logits at input resolution, and
a center head with the same architecture as the decoder but independent
parameters, whose output is read as pre-sigmoid center-ness logits.

Frames are processed independently along the time axis (2-D convolutions per
frame); tensors at module boundaries are time-last, matching the dataset
layout: frames (C, H, W, T), features (D, h, w, T), logits (C_view, H, W, T).
GroupNorm keeps per-frame statistics, so temporal independence is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


@dataclass
class BackboneConfig:
    channels: int = 64  # D, feature channels
    stride: int = 8  # spatial downsample factor
    depth: int = 3  # number of encoder stages after the stem
    atrous: bool = False  # add a dilated final stage (stride unchanged)
    in_channels: int = 1

    def __post_init__(self):
        if self.channels < 8:
            raise ConfigError(f"channels must be >= 8, got {self.channels}")
        if self.stride < 2 or self.stride & (self.stride - 1):
            raise ConfigError(f"stride must be a power of 2 >= 2, got {self.stride}")
        if self.depth < int(math.log2(self.stride)) - 1:
            raise ConfigError(
                f"depth {self.depth} too small for stride {self.stride} "
                f"(need >= {int(math.log2(self.stride)) - 1} stages after the stem)"
            )


@dataclass
class ViewFeatureVolume:
    """Per-view feature map, values (D, h, w, T) with h = H/stride, w = W/stride."""

    values: torch.Tensor
    view_id: str
    stride: int


@dataclass
class SegmentationOutput:
    """Per-view logits (C_view, H, W, T), one channel per class in the view."""

    logits: torch.Tensor
    view_id: str


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = 8
    while channels % groups:
        groups //= 2
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, dilation: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(
            in_ch, out_ch, 3, stride=stride, padding=dilation, dilation=dilation
        )
        self.norm1 = _group_norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=dilation, dilation=dilation)
        self.norm2 = _group_norm(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.skip(x))


class ViewEncoder(nn.Module):
    """Compact residual encoder; downsamples by config.stride exactly."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        num_down = int(math.log2(config.stride))
        stem_ch = max(8, config.channels // 2)
        self.stem = nn.Sequential(
            nn.Conv2d(config.in_channels, stem_ch, 3, stride=2, padding=1),
            _group_norm(stem_ch),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = stem_ch
        for i in range(config.depth):
            stride = 2 if i < num_down - 1 else 1
            stages.append(ResidualBlock(in_ch, config.channels, stride=stride))
            in_ch = config.channels
        if config.atrous:
            stages.append(ResidualBlock(in_ch, config.channels, dilation=2))
        self.stages = nn.Sequential(*stages)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """frames (T, C, H, W) -> features (T, D, h, w)."""
        return self.stages(self.stem(frames))


class ViewDecoder(nn.Module):
    """Feature-grid conv block, bilinear upsample by stride, one output conv."""

    def __init__(self, config: BackboneConfig, out_channels: int):
        super().__init__()
        self.config = config
        self.out_channels = out_channels
        self.refine = nn.Sequential(
            nn.Conv2d(config.channels, config.channels, 3, padding=1),
            _group_norm(config.channels),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(config.channels, out_channels, 3, padding=1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """features (T, D, h, w) -> logits (T, out_channels, H, W)."""
        x = self.refine(features)
        x = F.interpolate(x, scale_factor=self.config.stride, mode="bilinear", align_corners=False)
        return self.head(x)


# ---------------------------------------------------------------------------
# Time-last functional surface
# ---------------------------------------------------------------------------


def _to_batch(x: torch.Tensor) -> torch.Tensor:
    return x.permute(3, 0, 1, 2)  # (C, H, W, T) -> (T, C, H, W)


def _to_time_last(x: torch.Tensor) -> torch.Tensor:
    return x.permute(1, 2, 3, 0)  # (T, C, H, W) -> (C, H, W, T)


def encode_view(frames: torch.Tensor, view_id: str, encoder: ViewEncoder) -> ViewFeatureVolume:
    """Encode a (C, H, W, T) frame stack into a (D, h, w, T) feature volume."""
    stride = encoder.config.stride
    _, height, width, _ = frames.shape
    if height % stride or width % stride:
        raise ShapeError(f"spatial dims {height}x{width} not divisible by stride {stride}")
    features = encoder(_to_batch(frames))
    return ViewFeatureVolume(values=_to_time_last(features), view_id=view_id, stride=stride)


def decode_view(volume: ViewFeatureVolume, view_id: str, decoder: ViewDecoder) -> SegmentationOutput:
    """Decode a feature volume to (C_view, H, W, T) segmentation logits."""
    if volume.values.shape[0] != decoder.config.channels:
        raise ShapeError(
            f"feature channels {volume.values.shape[0]} != decoder channels "
            f"{decoder.config.channels}"
        )
    logits = decoder(_to_batch(volume.values))
    return SegmentationOutput(logits=_to_time_last(logits), view_id=view_id)


def center_head(volume: ViewFeatureVolume, view_id: str, head: ViewDecoder) -> torch.Tensor:
    """Run the center head; returns (C_view, H, W, T) pre-sigmoid center logits."""
    if volume.values.shape[0] != head.config.channels:
        raise ShapeError(
            f"feature channels {volume.values.shape[0]} != center-head channels "
            f"{head.config.channels}"
        )
    return _to_time_last(head(_to_batch(volume.values)))
