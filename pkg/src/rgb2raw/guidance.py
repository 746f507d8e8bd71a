"""RGB-guidance module: a super-resolution-style residual feature extractor.

A lift convolution takes the 3-channel conditioning image to the guidance
width, a stack of plain residual blocks (conv-ReLU-conv, no normalization)
refines it, and the stack output is added back onto the lifted features. All
convolutions are 3x3 with reflective padding, so the output keeps the input's
spatial size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class GuidanceConfig:
    n_resblocks: int = 4
    n_features: int = 64

    def __post_init__(self):
        if self.n_resblocks < 1 or self.n_features < 1:
            raise ValueError("n_resblocks and n_features must be >= 1")


def _conv3x3(in_ch: int, out_ch: int) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1, padding_mode="reflect")


class GuidanceResBlock(nn.Module):
    """conv -> ReLU -> conv with identity skip; no activation after the second conv."""

    def __init__(self, n_features: int):
        super().__init__()
        self.conv1 = _conv3x3(n_features, n_features)
        self.conv2 = _conv3x3(n_features, n_features)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class GuidanceEncoder(nn.Module):
    """Extracts multi-level guidance features F_rgb from a [-1, 1] RGB image."""

    def __init__(self, cfg: GuidanceConfig = GuidanceConfig()):
        super().__init__()
        self.cfg = cfg
        self.lift = _conv3x3(3, cfg.n_features)
        self.blocks = nn.Sequential(*[GuidanceResBlock(cfg.n_features) for _ in range(cfg.n_resblocks)])

    def forward(self, rgb_n: torch.Tensor) -> torch.Tensor:
        if rgb_n.shape[-3] != 3:
            raise ValueError(f"expected 3-channel input, got {rgb_n.shape[-3]}")
        base = self.lift(rgb_n)
        return base + self.blocks(base)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def downsample_guidance(features: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    """Bilinear resize to (target_h, target_w) with half-pixel centers.

    Identity (no resampling) when the target matches the source size.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got ({target_h}, {target_w})")
    if features.shape[-2:] == (target_h, target_w):
        return features
    return F.interpolate(features, size=(target_h, target_w), mode="bilinear", align_corners=False)
