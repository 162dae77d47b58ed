"""Global cross-view fusion.

Per-view feature volumes are stacked view-wise and fused by a view-wise
attention block: for each frame independently, every spatial-view position is
a token, and each token attends over all V*h*w tokens (no attention across
time). With the residual connection and the zero-initialized output
projection the block is the identity at initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import ViewFeatureVolume
from .errors import ShapeError


@dataclass
class AttentionConfig:
    key_dim: int | None = None  # d_k; defaults to channels // 2
    heads: int = 1
    temperature: float | None = None  # defaults to sqrt(d_k)
    residual: bool = True


@dataclass
class StackedViews:
    """View-stacked features, values (D, V, h, w, T)."""

    values: torch.Tensor
    view_ids: tuple[str, ...]

    @property
    def num_views(self) -> int:
        return self.values.shape[1]


def view_concat(features: list[ViewFeatureVolume]) -> StackedViews:
    """Stack per-view volumes along a new view axis: (D, V, h, w, T)."""
    if not features:
        raise ValueError("need at least one view to stack")
    shapes = {tuple(f.values.shape) for f in features}
    if len(shapes) > 1:
        raise ShapeError(f"view volumes disagree in shape: {sorted(shapes)}")
    values = torch.stack([f.values for f in features], dim=1)
    return StackedViews(values=values, view_ids=tuple(f.view_id for f in features))


def unstack_views(stacked: StackedViews, stride: int) -> list[ViewFeatureVolume]:
    """Inverse of view_concat."""
    return [
        ViewFeatureVolume(values=stacked.values[:, i], view_id=view_id, stride=stride)
        for i, view_id in enumerate(stacked.view_ids)
    ]


class ViewWiseAttention(nn.Module):
    """Single attention block over all spatial-view positions of one frame.

    Query/key/value projections map D -> heads*d_k; attention logits are
    scaled by 1/temperature; the output projection back to D starts at zero
    so that (with the residual) the module is the identity at init.
    """

    def __init__(self, channels: int, config: AttentionConfig | None = None):
        super().__init__()
        config = config or AttentionConfig()
        self.channels = channels
        self.heads = config.heads
        self.key_dim = config.key_dim if config.key_dim is not None else max(1, channels // 2)
        self.temperature = (
            config.temperature if config.temperature is not None else math.sqrt(self.key_dim)
        )
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        self.residual = config.residual
        width = self.heads * self.key_dim
        self.query = nn.Linear(channels, width)
        self.key = nn.Linear(channels, width)
        self.value = nn.Linear(channels, width)
        self.out = nn.Linear(width, channels)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, tokens: torch.Tensor, return_weights: bool = False):
        """tokens (B, N, D) -> (B, N, D); optional weights (B, heads, N, N)."""
        b, n, _ = tokens.shape
        q = self.query(tokens).view(b, n, self.heads, self.key_dim).transpose(1, 2)
        k = self.key(tokens).view(b, n, self.heads, self.key_dim).transpose(1, 2)
        v = self.value(tokens).view(b, n, self.heads, self.key_dim).transpose(1, 2)
        logits = q @ k.transpose(-2, -1) / self.temperature
        weights = torch.softmax(logits, dim=-1)
        readout = (weights @ v).transpose(1, 2).reshape(b, n, self.heads * self.key_dim)
        out = self.out(readout)
        if self.residual:
            out = tokens + out
        if return_weights:
            return out, weights
        return out


def view_wise_attention(
    stacked: StackedViews,
    attention: ViewWiseAttention,
    return_weights: bool = False,
):
    """Apply per-frame attention over all V*h*w positions of a stacked volume.

    Raises ValueError on non-finite input. Attention weight rows are
    row-stochastic over the V*h*w keys of the same frame; no attention
    crosses the time axis.
    """
    values = stacked.values
    if not torch.isfinite(values).all():
        raise ValueError("non-finite values in attention input")
    d, v, h, w, t = values.shape
    # (D, V, h, w, T) -> (T, V*h*w, D)
    tokens = values.permute(4, 1, 2, 3, 0).reshape(t, v * h * w, d)
    if return_weights:
        fused, weights = attention(tokens, return_weights=True)
    else:
        fused = attention(tokens)
    fused = fused.reshape(t, v, h, w, d).permute(4, 1, 2, 3, 0)
    result = StackedViews(values=fused, view_ids=stacked.view_ids)
    if return_weights:
        return result, weights
    return result


class GlobalFusion(nn.Module):
    """View-wise attention applied `layers` times (default once)."""

    def __init__(self, channels: int, config: AttentionConfig | None = None, layers: int = 1):
        super().__init__()
        self.blocks = nn.ModuleList(
            ViewWiseAttention(channels, config) for _ in range(layers)
        )

    def forward(self, stacked: StackedViews) -> StackedViews:
        for block in self.blocks:
            stacked = view_wise_attention(stacked, block)
        return stacked
