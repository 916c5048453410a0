"""Training objective (BCE + soft IoU) and a finite-difference gradient check."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

BCE_CLAMP = 1e-7
IOU_SMOOTH = 1e-6


def bce_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p)).mean()


def iou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Soft IoU complement, smoothed by 1e-6 on both sides of the ratio.

    Batched (B, ...) inputs score per sample and average; lower-rank inputs
    are treated as a single map.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.ndim == 4:
        p = pred.flatten(1)
        g = gt.flatten(1)
        dim = 1
    else:
        p = pred.flatten()
        g = gt.flatten()
        dim = 0
    inter = (p * g).sum(dim=dim)
    union = (p + g - p * g).sum(dim=dim)
    return (1.0 - (inter + IOU_SMOOTH) / (union + IOU_SMOOTH)).mean()


@dataclass(frozen=True)
class LossReport:
    bce: float
    iou: float

    @property
    def total(self) -> float:
        return self.bce + self.iou


def total_loss(pred: torch.Tensor, gt: torch.Tensor) -> tuple[torch.Tensor, LossReport]:
    """Summed objective as a graph tensor plus a plain-float report."""
    b = bce_loss(pred, gt)
    i = iou_loss(pred, gt)
    return b + i, LossReport(bce=float(b.detach()), iou=float(i.detach()))


def grad_check(
    model_fn: Callable[[torch.Tensor], torch.Tensor],
    params: Sequence[torch.Tensor],
    x: torch.Tensor,
    step: float = 1e-3,
    num_samples: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Scalar coordinates are sampled round-robin across ``params`` so every
    tensor is probed when ``num_samples >= len(params)``. Relative error uses
    max(|analytic|, |numeric|, 1e-8) as the denominator. Run models in 64-bit
    for meaningful tolerances.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    params = [p for p in params]
    if not params:
        raise ValueError("no parameters to check")
    for p in params:
        if not p.requires_grad:
            raise ValueError("all checked parameters must require grad")
        p.grad = None

    loss = model_fn(x)
    if not math.isfinite(float(loss.detach())):
        raise ValueError(f"non-finite loss {float(loss.detach())!r}")
    loss.backward()
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for k in range(num_samples):
            i = k % len(params)
            p = params[i]
            flat = p.view(-1)
            j = int(rng.integers(flat.numel()))
            orig = float(flat[j])
            flat[j] = orig + step
            up = float(model_fn(x))
            flat[j] = orig - step
            down = float(model_fn(x))
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            analytic = float(grads[i].view(-1)[j])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
