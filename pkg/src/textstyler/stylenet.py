"""Lightweight U-net with a residual bottleneck.

Three stride-2 levels (16 -> 32 -> 64 -> 64 channels), three residual blocks
at 1/8 resolution, skip connections on the way up and a sigmoid head so
outputs stay inside (0, 1).
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

CHANNELS = (16, 32, 64)
N_RES_BLOCKS = 3
DOWNSAMPLE = 8


def _conv(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1, padding_mode="replicate"),
                         nn.LeakyReLU(0.2))


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, 1, 1, padding_mode="replicate"),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ch, ch, 3, 1, 1, padding_mode="replicate"),
        )

    def forward(self, x):
        return x + self.body(x)


class Up(nn.Module):
    def __init__(self, cin, cskip, cout):
        super().__init__()
        self.conv = nn.Sequential(_conv(cin + cskip, cout), _conv(cout, cout))

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv(torch.cat([x, skip], dim=1))


class StyleNet(nn.Module):
    def __init__(self):
        super().__init__()
        c1, c2, c3 = CHANNELS
        self.inc = nn.Sequential(_conv(3, c1), _conv(c1, c1))
        self.down1 = nn.Sequential(_conv(c1, c2, 2), _conv(c2, c2))
        self.down2 = nn.Sequential(_conv(c2, c3, 2), _conv(c3, c3))
        self.down3 = nn.Sequential(_conv(c3, c3, 2), _conv(c3, c3))
        self.res = nn.Sequential(*[ResBlock(c3) for _ in range(N_RES_BLOCKS)])
        self.up3 = Up(c3, c3, c3)
        self.up2 = Up(c3, c2, c2)
        self.up1 = Up(c2, c1, c1)
        self.head = nn.Conv2d(c1, 3, 1)

    def forward(self, x):
        if not torch.isfinite(x).all():
            raise ValueError("StyleNet input contains non-finite values")
        h, w = x.shape[-2:]
        ph, pw = (-h) % DOWNSAMPLE, (-w) % DOWNSAMPLE
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        s1 = self.inc(x)
        s2 = self.down1(s1)
        s3 = self.down2(s2)
        z = self.res(self.down3(s3))
        y = self.up1(self.up2(self.up3(z, s3), s2), s1)
        y = torch.sigmoid(self.head(y))
        return y[..., :h, :w]


def init_stylenet(seed: int) -> StyleNet:
    """Build a StyleNet whose parameters depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return StyleNet()


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
