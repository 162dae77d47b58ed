"""Dense temporal cycle loss.

Fused per-view feature volumes are split along time into a template region
(first 2/5 of frames) and a search region (remaining 3/5). Both regions are
chunked into non-overlapping intervals of s frames; each interval is embedded
as the mean over its frames of the spatially mean-pooled feature vector.
Every template interval is softly reconstructed from the search intervals via
similarity-weighted averaging, mapped back onto the template intervals, and
penalized with the negative log-likelihood of landing on its own index.

Under fully symmetric features the loss equals ln(n) for n template
intervals; with cosine similarity it is invariant to positive rescaling of
the features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .backbone import ViewFeatureVolume

EPS = 1e-8

TEMPLATE_NUM, TEMPLATE_DEN = 2, 5  # template:search = 2:3 of T


@dataclass
class CycleConfig:
    chunk_size: int = 4  # s, frames per interval
    temperature: float = 0.1
    similarity: str = "cosine"  # or "dot"
    mode: str = "dense"  # or "single": one random template interval per call
    random_split: bool = False  # cyclically randomize the template placement

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.similarity not in ("cosine", "dot"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.mode not in ("dense", "single"):
            raise ValueError(f"unknown cycle mode {self.mode!r}")


@dataclass
class IntervalSet:
    """Interval embeddings, vectors (count, D); region is 'template' or 'search'."""

    vectors: torch.Tensor
    region: str
    view_id: str

    def __len__(self) -> int:
        return self.vectors.shape[0]


def split_template_search(fused: ViewFeatureVolume):
    """Split the time axis 2:3 into template and search frame blocks."""
    total = fused.values.shape[3]
    if total < 5:
        raise ValueError(f"need at least 5 frames to split 2:3, got {total}")
    boundary = (TEMPLATE_NUM * total) // TEMPLATE_DEN
    return fused.values[..., :boundary], fused.values[..., boundary:]


def frame_embeddings(values: torch.Tensor) -> torch.Tensor:
    """(D, h, w, T) -> (T, D) spatially mean-pooled frame vectors."""
    return values.mean(dim=(1, 2)).transpose(0, 1)


def chunk_intervals(frames: torch.Tensor, chunk_size: int, region: str, view_id: str) -> IntervalSet:
    """Chunk (D, h, w, t) frames into non-overlapping s-frame interval vectors.

    Each interval vector is the mean over the chunk of the pooled frame
    embeddings; a trailing remainder shorter than s is dropped.
    """
    t = frames.shape[3]
    if t < chunk_size:
        raise ValueError(f"region has {t} frames, shorter than chunk size {chunk_size}")
    count = t // chunk_size
    emb = frame_embeddings(frames)[: count * chunk_size]  # (count*s, D)
    vectors = emb.reshape(count, chunk_size, -1).mean(dim=1)
    return IntervalSet(vectors=vectors, region=region, view_id=view_id)


def _similarity(a: torch.Tensor, b: torch.Tensor, kind: str) -> torch.Tensor:
    """Pairwise similarities (len(a), len(b))."""
    if kind == "dot":
        return a @ b.transpose(0, 1)
    norm_a = a.norm(dim=1, keepdim=True) + EPS
    norm_b = b.norm(dim=1, keepdim=True) + EPS
    return (a / norm_a) @ (b / norm_b).transpose(0, 1)


def soft_reconstruct(p_k: torch.Tensor, search: IntervalSet, config: CycleConfig) -> torch.Tensor:
    """Reconstruct one template interval as a softmax-weighted sum of search intervals."""
    if len(search) == 0:
        raise ValueError("search region holds no intervals")
    sims = _similarity(p_k.unsqueeze(0), search.vectors, config.similarity)[0]
    weights = torch.softmax(sims / config.temperature, dim=0)
    return weights @ search.vectors


def cycle_back_loss(
    p_tilde: torch.Tensor, template: IntervalSet, k: int, config: CycleConfig
) -> torch.Tensor:
    """NLL of the reconstructed interval mapping back to its source index k."""
    n = len(template)
    if n == 0:
        raise ValueError("template region holds no intervals")
    if not 0 <= k < n:
        raise ValueError(f"source index {k} out of range [0, {n})")
    sims = _similarity(p_tilde.unsqueeze(0), template.vectors, config.similarity)[0]
    log_beta = torch.log_softmax(sims / config.temperature, dim=0)
    return -log_beta[k]


def cycle_back_logits(features: torch.Tensor, config: CycleConfig):
    """All-pairs cycle computation for one view.

    features are (D, h, w, T). Returns (log_beta, n) where log_beta[k, l] is
    the log-probability that template interval k cycles back to interval l.
    """
    volume = ViewFeatureVolume(values=features, view_id="", stride=1)
    template_frames, search_frames = split_template_search(volume)
    template = chunk_intervals(template_frames, config.chunk_size, "template", "")
    search = chunk_intervals(search_frames, config.chunk_size, "search", "")
    sims_ps = _similarity(template.vectors, search.vectors, config.similarity)
    weights = torch.softmax(sims_ps / config.temperature, dim=1)
    reconstructed = weights @ search.vectors  # (n, D)
    sims_back = _similarity(reconstructed, template.vectors, config.similarity)
    return torch.log_softmax(sims_back / config.temperature, dim=1), len(template)


def dense_cycle_loss(
    fused_views: list[ViewFeatureVolume],
    config: CycleConfig,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Cycle-back NLL averaged over views and template intervals.

    In `single` mode one random template interval per view contributes
    instead of all n (requires rng). With random_split the template block is
    placed at a random cyclic offset per call.
    """
    if not fused_views:
        raise ValueError("need at least one view")
    terms = []
    for volume in fused_views:
        values = volume.values
        if config.random_split:
            if rng is None:
                raise ValueError("random_split requires an rng")
            shift = int(torch.randint(0, values.shape[3], (1,), generator=rng))
            values = torch.roll(values, shifts=-shift, dims=3)
        log_beta, n = cycle_back_logits(values, config)
        diagonal = torch.diagonal(log_beta)
        if config.mode == "single":
            if rng is None:
                raise ValueError("single mode requires an rng")
            k = int(torch.randint(0, n, (1,), generator=rng))
            terms.append(-diagonal[k])
        else:
            terms.append(-diagonal.mean())
    return torch.stack(terms).mean()


def cycle_back_accuracy(fused_views: list[ViewFeatureVolume], config: CycleConfig) -> float:
    """Fraction of template intervals whose cycle-back argmax is their own index."""
    hits = 0
    total = 0
    with torch.no_grad():
        for volume in fused_views:
            log_beta, n = cycle_back_logits(volume.values, config)
            hits += int((log_beta.argmax(dim=1) == torch.arange(n)).sum())
            total += n
    return hits / total if total else 0.0
