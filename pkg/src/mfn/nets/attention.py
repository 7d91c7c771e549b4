"""Patch-affinity attention computed once at the bottleneck and reused
at every decoder level.

Scores come from cosine similarity between 3x3 patches extracted at all
N = H_b * W_b bottleneck positions, passed through a row-wise softmax.
Transfer recombines a feature map's non-overlapping blocks with those
scores; the block edge scales with the feature's resolution ratio to the
bottleneck, so position i always refers to the same image region.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..errors import UsageError


def attention_scores(feature: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Row-stochastic (B, N, N) patch-affinity matrix for a (B, C, H, W)
    bottleneck feature.  Zero-norm patches contribute zero similarity."""
    if feature.dim() != 4:
        raise UsageError("attention_scores expects a (B, C, H, W) tensor")
    padded = F.pad(feature, (1, 1, 1, 1), mode="reflect")
    patches = F.unfold(padded, kernel_size=3)        # (B, C*9, N)
    patches = patches.transpose(1, 2)                 # (B, N, C*9)
    norms = patches.norm(dim=2, keepdim=True).clamp_min(eps)
    normed = patches / norms
    logits = normed @ normed.transpose(1, 2)          # (B, N, N)
    return torch.softmax(logits, dim=2)


def attention_transfer(scores: torch.Tensor, feature: torch.Tensor) -> torch.Tensor:
    """Recombine feature blocks with shared attention scores.

    feature is (B, C, H, W) with H and W integer multiples of the
    bottleneck size implied by scores' N; output block i is the
    score-weighted sum over all blocks j.
    """
    if scores.dim() != 3 or scores.shape[1] != scores.shape[2]:
        raise UsageError("scores must be (B, N, N)")
    b, c, h, w = feature.shape
    n = scores.shape[1]
    hb = int(round((n * h / w) ** 0.5))
    wb = n // hb if hb else 0
    if hb * wb != n or h % hb or w % wb or h // hb != w // wb:
        raise UsageError(
            f"feature size {h}x{w} is not an integer block multiple of the "
            f"bottleneck grid implied by N={n}")
    k = h // hb
    cols = F.unfold(feature, kernel_size=k, stride=k)          # (B, C*k*k, N)
    mixed = torch.einsum("bij,bcj->bci", scores, cols)
    return F.fold(mixed, output_size=(h, w), kernel_size=k, stride=k)
