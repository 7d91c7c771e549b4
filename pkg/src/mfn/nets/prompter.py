"""Semantic prior prompter and its supervision.

The prompter is a small encoder-decoder stacked with dilation-pyramid
blocks; from a masked image (plus the mask as an extra channel) it emits
a pyramid of prior feature maps at 1/8, 1/4 and 1/2 of the input size,
smallest scale first.  During training the pyramid is pulled towards the
features of a frozen pretext extractor evaluated on the intact image.

The default extractor is a seeded random convolutional pyramid: frozen,
deterministic, and offline.  Any callable producing feature maps at the
same scales (e.g. a real classification backbone) can be dropped in.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import UsageError
from .blocks import PlainResidualBlock, SpaBlock, UpsampleConv


class FrozenPyramidExtractor(nn.Module):
    """Frozen stand-in for a pre-trained backbone.

    Stride-2 convolutions with tanh activations, weights drawn from a
    fixed seed.  forward() returns one feature map per stage, smallest
    spatial size first (strides 2**len(channels) ... 2).
    """

    def __init__(self, in_channels: int = 3, channels: tuple[int, ...] = (16, 32, 64),
                 seed: int = 7):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        prev = in_channels
        for ch in channels:
            conv = nn.Conv2d(prev, ch, 3, stride=2, padding=1)
            fan_in = prev * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) / fan_in ** 0.5)
                conv.bias.zero_()
            convs.append(conv)
            prev = ch
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.convs:
            x = torch.tanh(conv(x))
            feats.append(x)
        return feats[::-1]

    def train(self, mode: bool = True):
        # stays frozen in eval mode regardless of the surrounding module
        return super().train(False)


class PriorProjection(nn.Module):
    """Per-level 1x1 projections from prompter channels onto the pretext
    extractor's channel counts (smallest scale first)."""

    def __init__(self, prior_channels: int, target_channels: tuple[int, ...]):
        super().__init__()
        self.projections = nn.ModuleList(
            nn.Conv2d(prior_channels, t, 1) for t in target_channels
        )

    def forward(self, pyramid: list[torch.Tensor]) -> list[torch.Tensor]:
        if len(pyramid) != len(self.projections):
            raise UsageError(
                f"pyramid has {len(pyramid)} levels, projection expects {len(self.projections)}")
        return [proj(level) for proj, level in zip(self.projections, pyramid)]


def prior_loss(pyramid: list[torch.Tensor], targets: list[torch.Tensor],
               projection: PriorProjection | None = None) -> torch.Tensor:
    """Sum over levels of the mean absolute distance between the
    (optionally projected) pyramid and the frozen pretext features.
    Levels are matched positionally."""
    if len(pyramid) != len(targets):
        raise UsageError(f"level count mismatch: {len(pyramid)} vs {len(targets)}")
    projected = projection(pyramid) if projection is not None else pyramid
    total = None
    for level, target in zip(projected, targets):
        if level.shape != target.shape:
            raise UsageError(f"prior level shape {tuple(level.shape)} != target {tuple(target.shape)}")
        term = (level - target).abs().mean()
        total = term if total is None else total + term
    if total is None:
        raise UsageError("prior_loss needs at least one level")
    return total


class Prompter(nn.Module):
    """Encoder-decoder emitting the multi-scale prior pyramid.

    Input: masked image with the binary mask concatenated as a fourth
    channel; spatial size must be divisible by 8.  Output: feature maps
    at strides 8, 4, 2 (smallest first), each with prior_channels
    channels.  With multiscale=False only the stride-8 level exists.
    block_type selects the per-scale stack: 'spa' (dilation pyramid) or
    'residual' (plain residual blocks).
    """

    def __init__(self, in_channels: int = 4,
                 channels: tuple[int, int, int, int] = (32, 64, 96, 128),
                 prior_channels: int = 64, blocks_per_scale: int = 2,
                 rates: tuple[int, ...] = (1, 2, 4, 8),
                 block_type: str = "spa", multiscale: bool = True):
        super().__init__()
        if block_type not in ("spa", "residual"):
            raise UsageError(f"unknown block_type {block_type!r}")
        c0, c1, c2, c3 = channels
        self.multiscale = multiscale
        self.act = nn.LeakyReLU(0.2)
        self.stem = nn.Conv2d(in_channels, c0, 3, padding=1)
        self.down1 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.down3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)

        def stack(ch):
            if block_type == "spa":
                return nn.Sequential(*[SpaBlock(ch, rates) for _ in range(blocks_per_scale)])
            return nn.Sequential(*[PlainResidualBlock(ch) for _ in range(blocks_per_scale)])

        self._stack_prefix = "spa_stack" if block_type == "spa" else "res_stack"
        self.add_module(self._stack_prefix + "0", stack(c3))
        self.head0 = nn.Conv2d(c3, prior_channels, 1)
        if multiscale:
            self.up1 = UpsampleConv(c3, c2)
            self.add_module(self._stack_prefix + "1", stack(c2))
            self.head1 = nn.Conv2d(c2, prior_channels, 1)
            self.up2 = UpsampleConv(c2, c1)
            self.add_module(self._stack_prefix + "2", stack(c1))
            self.head2 = nn.Conv2d(c1, prior_channels, 1)

    def _stack(self, index: int) -> nn.Module:
        return getattr(self, f"{self._stack_prefix}{index}")

    def forward(self, masked_image: torch.Tensor, mask: torch.Tensor) -> list[torch.Tensor]:
        h, w = masked_image.shape[-2:]
        if h % 8 or w % 8:
            raise UsageError(f"prompter input size {h}x{w} must be divisible by 8")
        x = torch.cat([masked_image, mask.to(masked_image.dtype)], dim=1)
        e0 = self.act(self.stem(x))
        e1 = self.act(self.down1(e0))
        e2 = self.act(self.down2(e1))
        e3 = self.act(self.down3(e2))

        d0 = self._stack(0)(e3)
        levels = [self.head0(d0)]
        if self.multiscale:
            d1 = self._stack(1)(self.up1(d0) + e2)
            levels.append(self.head1(d1))
            d2 = self._stack(2)(self.up2(d1) + e1)
            levels.append(self.head2(d2))
        return levels
