"""Quality-weighted pyramid fusion and the attention-gated top-down decoder."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import DEFAULT_WIDTHS, FeaturePyramid


class ChannelAttention(nn.Module):
    """Squeeze both avg- and max-pooled stats through a shared bottleneck MLP."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.fc1 = nn.Conv2d(channels, hidden, 1, bias=False)
        self.fc2 = nn.Conv2d(hidden, channels, 1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = self.fc2(F.relu(self.fc1(F.adaptive_avg_pool2d(x, 1))))
        mx = self.fc2(F.relu(self.fc1(F.adaptive_max_pool2d(x, 1))))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        stats = torch.cat([x.mean(dim=1, keepdim=True), x.max(dim=1, keepdim=True).values], dim=1)
        return torch.sigmoid(self.conv(stats))


class CBAMBlock(nn.Module):
    """Channel gate then spatial gate; both gates live strictly in (0, 1)."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x * self.channel(x)
        return x * self.spatial(x)


class Decoder(nn.Module):
    """Top-down refinement over a fused pyramid, deepest level first.

    Each level gets a CBAM block and a 3x3 conv; the conv at level j projects
    to level j-1's width so the lateral addition is well-typed, and the
    shallowest pair runs right before the 1x1 prediction head. The squashed
    map is bilinearly upsampled back to the input resolution.
    """

    def __init__(self, widths: tuple[int, ...] = DEFAULT_WIDTHS, cbam_reduction: int = 16):
        super().__init__()
        if not widths:
            raise ValueError("need at least one pyramid width")
        self.widths = tuple(widths)
        self.cbams = nn.ModuleList(CBAMBlock(c, cbam_reduction) for c in widths)
        outs = (widths[0],) + tuple(widths[:-1])  # level 0 keeps its width
        self.convs = nn.ModuleList(
            nn.Conv2d(c_in, c_out, 3, padding=1) for c_in, c_out in zip(widths, outs)
        )
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        if len(pyramid) != len(self.widths):
            raise ValueError(f"expected {len(self.widths)} levels, got {len(pyramid)}")
        h = pyramid[-1]
        for i in range(len(pyramid) - 1, 0, -1):
            up = F.interpolate(
                self.convs[i](self.cbams[i](h)), scale_factor=2, mode="bilinear", align_corners=False
            )
            h = pyramid[i - 1] + up
        h = self.convs[0](self.cbams[0](h))
        pred = torch.sigmoid(self.head(h))
        return F.interpolate(pred, scale_factor=2, mode="bilinear", align_corners=False)


def fuse(
    pyr_m1: FeaturePyramid,
    pyr_m2: FeaturePyramid,
    beta_m1: torch.Tensor | float,
    beta_m2: torch.Tensor | float,
) -> FeaturePyramid:
    """Convex per-level combination; one weight pair applies to every level.

    Weights may be scalars or per-sample (B,) tensors.
    """
    if len(pyr_m1) != len(pyr_m2):
        raise ValueError("pyramids differ in depth")
    b1, b2 = beta_m1, beta_m2
    if isinstance(b1, torch.Tensor) and b1.ndim == 1:
        b1 = b1[:, None, None, None]
        b2 = b2[:, None, None, None]
    return [b1 * g1 + b2 * g2 for g1, g2 in zip(pyr_m1, pyr_m2)]


def decode(decoder: Decoder, fused: FeaturePyramid) -> torch.Tensor:
    """Saliency logits squashed to (0, 1) at the original input resolution."""
    return decoder(fused)
