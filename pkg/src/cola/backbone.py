"""Dual-branch pyramid encoders, trainable duplicates, and zero-init 1x1 taps."""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

DEFAULT_WIDTHS = (16, 32, 64, 128, 256)

FeaturePyramid = list[torch.Tensor]  # shallow -> deep, level j at input/2^j


class EncoderBranch(nn.Module):
    """Stack of [3x3 conv -> norm -> ReLU -> 2x avg-pool] stages.

    Convs are bias-free and normalization defaults to identity, so an
    all-zero input yields an all-zero pyramid and the stack is positively
    homogeneous in its input.
    """

    def __init__(self, widths: tuple[int, ...] = DEFAULT_WIDTHS, in_channels: int = 3, norm: str = "none"):
        super().__init__()
        if not widths:
            raise ValueError("need at least one stage width")
        if norm not in ("none", "group"):
            raise ValueError(f"unknown norm {norm!r}")
        self.widths = tuple(widths)
        stages = []
        c_in = in_channels
        for c in widths:
            ops: list[nn.Module] = [nn.Conv2d(c_in, c, 3, padding=1, bias=False)]
            if norm == "group":
                ops.append(nn.GroupNorm(min(4, c), c))
            ops += [nn.ReLU(inplace=True), nn.AvgPool2d(2)]
            stages.append(nn.Sequential(*ops))
            c_in = c
        self.stages = nn.ModuleList(stages)

    @property
    def levels(self) -> int:
        return len(self.stages)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class DualEncoder(nn.Module):
    """Independent per-modality branches sharing one architecture."""

    def __init__(self, widths: tuple[int, ...] = DEFAULT_WIDTHS, norm: str = "none"):
        super().__init__()
        self.branch_m1 = EncoderBranch(widths, norm=norm)
        self.branch_m2 = EncoderBranch(widths, norm=norm)

    @property
    def widths(self) -> tuple[int, ...]:
        return self.branch_m1.widths


class ZeroConvs(nn.Module):
    """One zero-initialized 1x1 conv per branch per pyramid level.

    Weights and biases start at exactly zero, so at initialization the taps
    contribute nothing and gradients reach the duplicate branches only once
    the taps move off zero.
    """

    def __init__(self, widths: tuple[int, ...] = DEFAULT_WIDTHS):
        super().__init__()
        self.m1 = nn.ModuleList(nn.Conv2d(c, c, 1) for c in widths)
        self.m2 = nn.ModuleList(nn.Conv2d(c, c, 1) for c in widths)
        for conv in list(self.m1) + list(self.m2):
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)


@dataclass
class BackboneState:
    """Encoder parameters: original branches plus optional duplicate and taps."""

    theta: DualEncoder
    theta_f: DualEncoder | None = None
    theta_z: ZeroConvs | None = None

    @property
    def has_copy(self) -> bool:
        return self.theta_f is not None


def encode(branch: EncoderBranch, x: torch.Tensor) -> FeaturePyramid:
    """Run one branch on a (B, 3, H, W) batch; H and W divisible by 2^levels."""
    if x.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got {tuple(x.shape)}")
    div = 2 ** branch.levels
    if x.shape[-2] % div or x.shape[-1] % div:
        raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by {div}")
    return branch(x)


def make_trainable_copy(state: BackboneState) -> BackboneState:
    """Duplicate the branches and attach fresh zero taps; freeze the originals."""
    if state.has_copy:
        raise ValueError("backbone already carries a trainable copy")
    theta_f = copy.deepcopy(state.theta)
    theta_z = ZeroConvs(state.theta.widths)
    set_trainable(state.theta, False)
    set_trainable(theta_f, True)
    set_trainable(theta_z, True)
    return BackboneState(theta=state.theta, theta_f=theta_f, theta_z=theta_z)


def cd_forward(
    x: torch.Tensor,
    frozen: EncoderBranch,
    duplicate: EncoderBranch,
    taps: nn.ModuleList,
) -> FeaturePyramid:
    """Per-level sum of the frozen path and the zero-conv'd duplicate path."""
    base = encode(frozen, x)
    extra = encode(duplicate, x)
    return [g + tap(e) for g, e, tap in zip(base, extra, taps)]


# ---------------------------------------------------------------------------
# parameter bookkeeping


def set_trainable(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def param_digest(module: nn.Module) -> str:
    """SHA-256 over sorted (name, shape, bytes) of all parameters."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        arr = p.detach().cpu().contiguous().numpy()
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(np.asarray(arr.shape, dtype=np.int64).tobytes())
        h.update(arr.tobytes())
    return h.hexdigest()


def init_parameters(module: nn.Module, rng: np.random.Generator) -> None:
    """He-normal conv weights, unit norm gains, zero biases; deterministic.

    Parameters are visited in sorted name order so draws are stable for a
    fixed architecture.
    """
    with torch.no_grad():
        for name, p in sorted(module.named_parameters()):
            if p.ndim >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                vals = rng.standard_normal(tuple(p.shape)) * np.sqrt(2.0 / fan_in)
                p.copy_(torch.as_tensor(vals, dtype=p.dtype))
            elif name.endswith("bias"):
                p.zero_()
            else:  # norm gains
                p.fill_(1.0)
