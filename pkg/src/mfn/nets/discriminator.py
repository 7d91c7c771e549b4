"""Patch-level least-squares discriminator with spectral normalization.

Four stride-2 convolutions take a 3-channel image to a single-channel
score map at stride 16 (512 -> 32x32); scores are unbounded reals and
the loss side supplies the soft targets.
"""

from __future__ import annotations

import torch.nn as nn
from torch.nn.utils import spectral_norm


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int = 3, base_channels: int = 64):
        super().__init__()
        c = base_channels
        self.model = nn.Sequential(
            spectral_norm(nn.Conv2d(in_channels, c, 4, stride=2, padding=1)),
            nn.LeakyReLU(0.2),
            spectral_norm(nn.Conv2d(c, 2 * c, 4, stride=2, padding=1)),
            nn.LeakyReLU(0.2),
            spectral_norm(nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1)),
            nn.LeakyReLU(0.2),
            spectral_norm(nn.Conv2d(4 * c, 8 * c, 4, stride=2, padding=1)),
            nn.LeakyReLU(0.2),
            nn.Conv2d(8 * c, 1, 3, padding=1),
        )

    def forward(self, image):
        return self.model(image)
