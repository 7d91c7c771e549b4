"""Prior-guided image generator.

Data flow: a four-stage encoder takes the masked image (mask appended as
a channel) down to a stride-16 bottleneck; patch-affinity scores are
computed there once and shared; eight prior-transfer blocks refine the
bottleneck under the smallest-scale prior; the decoder then upsamples,
applies one prior-transfer block per level with the matching prior
scale, and fuses with the attention-recombined encoder feature of that
level; a final tanh-bounded convolution emits the image in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import UsageError
from .attention import attention_scores, attention_transfer
from .blocks import ConcatFuseBlock, LptBlock, UpsampleConv


class Encoder(nn.Module):
    """Four stride-2 stages; features at strides 2, 4, 8, 16."""

    def __init__(self, in_channels: int = 4,
                 channels: tuple[int, int, int, int] = (64, 128, 256, 512)):
        super().__init__()
        self.act = nn.LeakyReLU(0.2)
        downs, refines = [], []
        prev = in_channels
        for ch in channels:
            downs.append(nn.Conv2d(prev, ch, 3, stride=2, padding=1))
            refines.append(nn.Conv2d(ch, ch, 3, padding=1))
            prev = ch
        self.downs = nn.ModuleList(downs)
        self.refines = nn.ModuleList(refines)

    def forward(self, masked_image: torch.Tensor, mask: torch.Tensor) -> list[torch.Tensor]:
        h, w = masked_image.shape[-2:]
        if h % 16 or w % 16:
            raise UsageError(f"encoder input size {h}x{w} must be divisible by 16")
        x = torch.cat([masked_image, mask.to(masked_image.dtype)], dim=1)
        feats = []
        for down, refine in zip(self.downs, self.refines):
            x = self.act(down(x))
            x = self.act(refine(x))
            feats.append(x)
        return feats


class BottleneckStack(nn.Module):
    """Eight prior-transfer blocks at the bottleneck, each followed by a
    3x3 convolution + activation.  The prior is first resized to the
    bottleneck grid and projected to the bottleneck channel count."""

    def __init__(self, channels: int, prior_channels: int, num_blocks: int = 8,
                 hidden: int = 64, fusion: str = "lpt"):
        super().__init__()
        self.prior_proj = nn.Conv2d(prior_channels, channels, 3, padding=1)
        if fusion == "lpt":
            self.blocks = nn.ModuleList(
                LptBlock(channels, channels, hidden) for _ in range(num_blocks))
        elif fusion == "concat":
            self.blocks = nn.ModuleList(
                ConcatFuseBlock(channels, channels) for _ in range(num_blocks))
        else:
            raise UsageError(f"unknown fusion mode {fusion!r}")
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=1) for _ in range(num_blocks))
        self.act = nn.LeakyReLU(0.2)

    def __len__(self) -> int:
        return len(self.blocks)

    def forward(self, x: torch.Tensor, prior: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if prior.shape[-2:] != x.shape[-2:]:
            prior = F.interpolate(prior, size=x.shape[-2:], mode="bilinear",
                                  align_corners=False)
        prior = self.prior_proj(prior)
        for block, conv in zip(self.blocks, self.convs):
            x = self.act(conv(block(x, prior, mask)))
        return x


@dataclass
class GeneratorOutput:
    """Everything the forward pass produces, for training and probing."""

    image: torch.Tensor                       # (B, 3, H, W) in [-1, 1]
    scores: torch.Tensor | None               # shared (B, N, N) attention
    encoder_features: list = field(default_factory=list)
    decoder_features: list = field(default_factory=list)  # per-level, deep to shallow
    fused_features: list = field(default_factory=list)


class Generator(nn.Module):
    """Encoder + attention + prior-transfer bottleneck/decoder.

    fusion: 'lpt' (default) or 'concat' (plain concatenation + conv).
    use_attention=False replaces attention fusion with additive skip
    connections from the encoder.  prior_levels is 3 (multi-scale) or 1
    (one prior reused everywhere).
    """

    def __init__(self, in_channels: int = 4,
                 channels: tuple[int, int, int, int] = (64, 128, 256, 512),
                 prior_channels: int = 64, bottleneck_blocks: int = 8,
                 lpt_hidden: int = 64, fusion: str = "lpt",
                 use_attention: bool = True, prior_levels: int = 3):
        super().__init__()
        if prior_levels not in (1, 3):
            raise UsageError("prior_levels must be 1 or 3")
        c1, c2, c3, c4 = channels
        self.use_attention = use_attention
        self.prior_levels = prior_levels
        self.act = nn.LeakyReLU(0.2)
        self.encoder = Encoder(in_channels, channels)
        self.bottleneck = BottleneckStack(c4, prior_channels, bottleneck_blocks,
                                          lpt_hidden, fusion)

        def make_fuser(ch, prior_ch):
            if fusion == "lpt":
                return LptBlock(ch, prior_ch, lpt_hidden)
            return ConcatFuseBlock(ch, prior_ch)

        self.up3 = UpsampleConv(c4, c3)
        self.up2 = UpsampleConv(c3, c2)
        self.up1 = UpsampleConv(c2, c1)
        self.lpt3 = make_fuser(c3, prior_channels)
        self.lpt2 = make_fuser(c2, prior_channels)
        self.lpt1 = make_fuser(c1, prior_channels)
        if use_attention:
            self.fuse4 = nn.Conv2d(2 * c4, c4, 3, padding=1)
            self.fuse3 = nn.Conv2d(2 * c3, c3, 3, padding=1)
            self.fuse2 = nn.Conv2d(2 * c2, c2, 3, padding=1)
            self.fuse1 = nn.Conv2d(2 * c1, c1, 3, padding=1)
        self.final_up = UpsampleConv(c1, c1)
        self.to_rgb = nn.Conv2d(c1, 3, 3, padding=1)

    def _prior_for(self, priors: list[torch.Tensor], level: int) -> torch.Tensor:
        # level: 0 = bottleneck/deepest decoder scale, 1 = middle, 2 = shallow
        if len(priors) == 1:
            return priors[0]
        return priors[level]

    def forward(self, masked_image: torch.Tensor, mask: torch.Tensor,
                priors: list[torch.Tensor]) -> GeneratorOutput:
        expected = 1 if self.prior_levels == 1 else 3
        if len(priors) != expected:
            raise UsageError(f"generator expects {expected} prior level(s), got {len(priors)}")
        f1, f2, f3, f4 = self.encoder(masked_image, mask)

        scores = attention_scores(f4) if self.use_attention else None
        b = self.bottleneck(f4, self._prior_for(priors, 0), mask)
        if self.use_attention:
            a4 = attention_transfer(scores, f4)
            u = self.act(self.fuse4(torch.cat([a4, b], dim=1)))
        else:
            u = b + f4

        decoder_features = [b]
        fused_features = [u]
        levels = [
            (self.up3, self.lpt3, getattr(self, "fuse3", None), f3, 0),
            (self.up2, self.lpt2, getattr(self, "fuse2", None), f2, 1),
            (self.up1, self.lpt1, getattr(self, "fuse1", None), f1, 2),
        ]
        for up, lpt, fuse, enc_feat, prior_idx in levels:
            d = lpt(up(u), self._prior_for(priors, prior_idx), mask)
            if self.use_attention:
                a = attention_transfer(scores, enc_feat)
                u = self.act(fuse(torch.cat([a, d], dim=1)))
            else:
                u = d + enc_feat
            decoder_features.append(d)
            fused_features.append(u)

        image = torch.tanh(self.to_rgb(self.final_up(u)))
        return GeneratorOutput(
            image=image, scores=scores,
            encoder_features=[f1, f2, f3, f4],
            decoder_features=decoder_features,
            fused_features=fused_features,
        )


def composite_output(i_p: torch.Tensor, i_gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Hole pixels from the prediction, known pixels from the original."""
    if i_p.shape != i_gt.shape:
        raise UsageError(f"shape mismatch: {tuple(i_p.shape)} vs {tuple(i_gt.shape)}")
    m = mask.to(i_p.dtype)
    return i_p * m + i_gt * (1.0 - m)
