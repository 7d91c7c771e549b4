"""Training objective: mask-weighted reconstruction, perceptual and
style (Gram) distances on frozen extractor features, least-squares
patch-adversarial terms with a soft known-region target, and the
weighted total.

All reductions are means over elements.  Every term is non-negative and
zero on identical inputs where that makes sense.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .config import LossWeights
from .errors import NumericError, UsageError


@dataclass
class LossReport:
    """Per-step scalar record appended to the training log."""

    rec: float = 0.0
    perc: float = 0.0
    style: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    prior: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def rec_loss(i_p: torch.Tensor, i_gt: torch.Tensor, mask: torch.Tensor,
             alpha: float = 1.0) -> torch.Tensor:
    """Mean absolute error with hole pixels weighted (1 + alpha)."""
    if i_p.shape != i_gt.shape:
        raise UsageError(f"shape mismatch: {tuple(i_p.shape)} vs {tuple(i_gt.shape)}")
    weight = 1.0 + alpha * mask.to(i_p.dtype)
    return ((i_p - i_gt).abs() * weight).mean()


def perceptual_loss(i_p: torch.Tensor, i_gt: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over extractor levels of mean absolute feature distance."""
    feats_p = extractor(i_p)
    feats_g = extractor(i_gt)
    if len(feats_p) != len(feats_g):
        raise UsageError("extractor returned differing level counts")
    total = None
    for fp, fg in zip(feats_p, feats_g):
        if fp.shape != fg.shape:
            raise UsageError(f"feature shape mismatch: {tuple(fp.shape)} vs {tuple(fg.shape)}")
        term = (fp - fg).abs().mean()
        total = term if total is None else total + term
    if total is None:
        raise UsageError("extractor produced no feature levels")
    return total


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """(B, C, C) channel affinity of a (B, C, H, W) feature, normalized
    by the total element count C*H*W."""
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def style_loss(i_p: torch.Tensor, i_gt: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over levels of mean absolute Gram-matrix distance."""
    feats_p = extractor(i_p)
    feats_g = extractor(i_gt)
    if len(feats_p) != len(feats_g):
        raise UsageError("extractor returned differing level counts")
    total = None
    for fp, fg in zip(feats_p, feats_g):
        term = (gram_matrix(fp) - gram_matrix(fg)).abs().mean()
        total = term if total is None else total + term
    if total is None:
        raise UsageError("extractor produced no feature levels")
    return total


def _gaussian_kernel1d(size: int, sigma: float, dtype, device) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    k = torch.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def soft_known_target(mask: torch.Tensor, out_size: tuple[int, int],
                      kernel_size: int = 15, sigma: float = 5.0) -> torch.Tensor:
    """Soft discriminator target for generated images: the known-region
    indicator (1 - mask) area-averaged onto the score grid, then
    Gaussian-smoothed.  Values stay in [0, 1]."""
    known = 1.0 - mask.to(torch.float32 if not mask.is_floating_point() else mask.dtype)
    if known.shape[-2:] != tuple(out_size):
        known = F.interpolate(known, size=out_size, mode="area")
    k = _gaussian_kernel1d(kernel_size, sigma, known.dtype, known.device)
    pad = kernel_size // 2
    c = known.shape[1]
    smoothed = F.pad(known, (pad, pad, 0, 0), mode="replicate")
    smoothed = F.conv2d(smoothed, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    smoothed = F.pad(smoothed, (0, 0, pad, pad), mode="replicate")
    smoothed = F.conv2d(smoothed, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)
    return smoothed.clamp(0.0, 1.0)


def adv_d_loss(d_fake: torch.Tensor, d_real: torch.Tensor,
               mask: torch.Tensor | None = None,
               sigma_map: torch.Tensor | None = None,
               kernel_size: int = 15, sigma: float = 5.0) -> torch.Tensor:
    """Least-squares discriminator loss: fake patches target the soft
    known-region map, real patches target 1."""
    if sigma_map is None:
        if mask is None:
            raise UsageError("adv_d_loss needs mask or sigma_map")
        sigma_map = soft_known_target(mask, d_fake.shape[-2:], kernel_size, sigma)
    if sigma_map.shape[-2:] != d_fake.shape[-2:]:
        raise UsageError(
            f"sigma_map size {tuple(sigma_map.shape[-2:])} != discriminator "
            f"output {tuple(d_fake.shape[-2:])}")
    return ((d_fake - sigma_map) ** 2).mean() + ((d_real - 1.0) ** 2).mean()


def adv_g_loss(d_fake: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Least-squares generator loss, gated to hole patches only."""
    m = mask.to(d_fake.dtype)
    if m.shape[-2:] != d_fake.shape[-2:]:
        m = F.interpolate(m, size=d_fake.shape[-2:], mode="nearest")
    return (((d_fake - 1.0) ** 2) * m).mean()


def _check_finite(name: str, value) -> float:
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise NumericError(f"loss term '{name}' is not finite: {v}")
    return v


def total_loss(terms: dict, weights: LossWeights, prior) -> torch.Tensor:
    """Weighted objective: prior + lambda_rec*rec + lambda_perc*perc
    + lambda_style*style + lambda_adv*adv.  Raises NumericError naming
    any non-finite term."""
    required = ("rec", "perc", "style", "adv")
    missing = [k for k in required if k not in terms]
    if missing:
        raise UsageError(f"total_loss missing term(s): {missing}")
    for name in required:
        _check_finite(name, terms[name])
    _check_finite("prior", prior)
    return (prior
            + weights.lambda_rec * terms["rec"]
            + weights.lambda_perc * terms["perc"]
            + weights.lambda_style * terms["style"]
            + weights.lambda_adv * terms["adv"])
