"""Building blocks: dilation-pyramid residual blocks, region
normalization, and the prior-transfer (normalize + spatial affine)
block used throughout the generator's decoder."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import UsageError


class SpaBlock(nn.Module):
    """Residual block aggregating parallel dilated convolutions.

    Each branch is a 3x3 convolution at one dilation rate; branch outputs
    are concatenated and fused by a final 3x3 convolution that is added
    back onto the input.  Zeroing the fuse weights makes the block an
    exact identity.
    """

    def __init__(self, channels: int, rates: tuple[int, ...] = (1, 2, 4, 8)):
        super().__init__()
        if channels % len(rates) != 0:
            raise UsageError(f"channels ({channels}) must be divisible by len(rates) ({len(rates)})")
        branch_ch = channels // len(rates)
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, branch_ch, 3, padding=r, dilation=r) for r in rates
        )
        self.fuse = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        y = torch.cat([self.act(branch(x)) for branch in self.branches], dim=1)
        return x + self.fuse(y)


class PlainResidualBlock(nn.Module):
    """Two 3x3 convolutions with a residual connection; the no-frills
    replacement used by the dilation-pyramid ablation."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


def region_normalize(x: torch.Tensor, mask: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Standardize each channel separately over hole and known pixels.

    mask is (B, 1, H*, W*) with 1 = hole; it is nearest-resized to x's
    spatial size.  Statistics are per (sample, channel, region) with
    population variance.  An empty region falls back to whole-map
    statistics so the output is always defined.
    """
    if x.dim() != 4 or mask.dim() != 4:
        raise UsageError("region_normalize expects 4-D feature and mask tensors")
    m = mask.to(x.dtype)
    if m.shape[-2:] != x.shape[-2:]:
        m = F.interpolate(m, size=x.shape[-2:], mode="nearest")

    def stats(weights):
        cnt = weights.sum(dim=(2, 3), keepdim=True)
        safe = cnt.clamp_min(1.0)
        mean = (x * weights).sum(dim=(2, 3), keepdim=True) / safe
        var = (((x - mean) ** 2) * weights).sum(dim=(2, 3), keepdim=True) / safe
        return cnt, mean, var

    ones = torch.ones_like(m)
    _, mean_all, var_all = stats(ones)
    cnt_h, mean_h, var_h = stats(m)
    cnt_k, mean_k, var_k = stats(1.0 - m)

    has_h = (cnt_h > 0).to(x.dtype)
    has_k = (cnt_k > 0).to(x.dtype)
    mean_h = has_h * mean_h + (1 - has_h) * mean_all
    var_h = has_h * var_h + (1 - has_h) * var_all
    mean_k = has_k * mean_k + (1 - has_k) * mean_all
    var_k = has_k * var_k + (1 - has_k) * var_all

    norm_h = (x - mean_h) / torch.sqrt(var_h + eps)
    norm_k = (x - mean_k) / torch.sqrt(var_k + eps)
    return norm_h * m + norm_k * (1.0 - m)


class SpadeModulation(nn.Module):
    """Predicts per-pixel scale and shift maps from a conditioning
    feature.  Heads are zero-initialized with the scale bias at 1, so a
    freshly built module emits (scale=1, shift=0)."""

    def __init__(self, cond_channels: int, out_channels: int, hidden: int = 64):
        super().__init__()
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        self.scale_head = nn.Conv2d(hidden, out_channels, 3, padding=1)
        self.shift_head = nn.Conv2d(hidden, out_channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        nn.init.zeros_(self.scale_head.weight)
        nn.init.ones_(self.scale_head.bias)
        nn.init.zeros_(self.shift_head.weight)
        nn.init.zeros_(self.shift_head.bias)

    def forward(self, cond):
        h = self.act(self.shared(cond))
        return self.scale_head(h), self.shift_head(h)


class LptBlock(nn.Module):
    """Prior transfer: region-normalize the image feature, then apply a
    spatial affine transform whose scale/shift maps are predicted from
    the prior feature (bilinearly resized to the feature's size)."""

    def __init__(self, feature_channels: int, prior_channels: int,
                 hidden: int = 64, eps: float = 1e-5):
        super().__init__()
        self.modulation = SpadeModulation(prior_channels, feature_channels, hidden)
        self.eps = eps

    def forward(self, x, prior, mask):
        if prior.shape[-2:] != x.shape[-2:]:
            prior = F.interpolate(prior, size=x.shape[-2:], mode="bilinear",
                                  align_corners=False)
        scale, shift = self.modulation(prior)
        return scale * region_normalize(x, mask, self.eps) + shift


class ConcatFuseBlock(nn.Module):
    """Prior fusion by plain concatenation + convolution; the drop-in
    replacement for LptBlock under the no-prior-transfer ablation."""

    def __init__(self, feature_channels: int, prior_channels: int):
        super().__init__()
        self.fuse = nn.Conv2d(feature_channels + prior_channels, feature_channels,
                              3, padding=1)

    def forward(self, x, prior, mask):
        if prior.shape[-2:] != x.shape[-2:]:
            prior = F.interpolate(prior, size=x.shape[-2:], mode="bilinear",
                                  align_corners=False)
        return self.fuse(torch.cat([x, prior], dim=1))


class UpsampleConv(nn.Module):
    """Nearest-neighbor x2 upsampling followed by a 3x3 convolution;
    avoids the checkerboard artifacts of transposed convolutions."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        return self.act(self.conv(F.interpolate(x, scale_factor=2, mode="nearest")))
