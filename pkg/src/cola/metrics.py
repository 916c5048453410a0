"""Saliency metrics (MAE, F, S, E), dataset evaluation, and robustness rollups."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .data import ALL_CONDITIONS, Condition, Dataset

# fixed sweep for the threshold-averaged measures: k/256 for k = 1..255;
# binarization is pred >= t, so already-binary maps are sweep-invariant
THRESHOLDS = tuple(k / 256.0 for k in range(1, 256))

F_BETA2 = 0.3
SSIM_GUARD = 1e-20


def _as_map(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    return arr


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = _as_map(pred)
    g = _as_map(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if p.min() < 0 or p.max() > 1:
        raise ValueError("prediction values must lie in [0, 1]")
    if not np.isin(g, (0.0, 1.0)).all():
        raise ValueError("ground truth must be binary")
    return p, g


def mae(pred, gt) -> float:
    p, g = _check_pair(pred, gt)
    return float(np.abs(p - g).mean())


def f_measure_mean(pred, gt, beta2: float = F_BETA2) -> float:
    """F-measure averaged over the fixed threshold sweep, zero-guarded."""
    p, g = _check_pair(pred, gt)
    pv = np.sort(p.ravel())
    fg = np.sort(p.ravel()[g.ravel() > 0.5])
    n, n_fg = pv.size, fg.size
    acc = 0.0
    for t in THRESHOLDS:
        n_bin = n - int(np.searchsorted(pv, t, side="left"))
        tp = n_fg - int(np.searchsorted(fg, t, side="left"))
        prec = tp / n_bin if n_bin > 0 else 0.0
        rec = tp / n_fg if n_fg > 0 else 0.0
        denom = beta2 * prec + rec
        acc += (1.0 + beta2) * prec * rec / denom if denom > 0 else 0.0
    return acc / len(THRESHOLDS)


def f_measure_adaptive(pred, gt, beta2: float = F_BETA2) -> float:
    """Single F-measure at the adaptive threshold min(2 * mean(pred), 1)."""
    p, g = _check_pair(pred, gt)
    t = min(2.0 * p.mean(), 1.0)
    b = p >= t
    tp = float((b & (g > 0.5)).sum())
    n_bin = float(b.sum())
    n_fg = float((g > 0.5).sum())
    prec = tp / n_bin if n_bin > 0 else 0.0
    rec = tp / n_fg if n_fg > 0 else 0.0
    denom = beta2 * prec + rec
    return (1.0 + beta2) * prec * rec / denom if denom > 0 else 0.0


def _object_score(x: np.ndarray) -> float:
    xm = float(x.mean())
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return 2.0 * xm / (xm * xm + 1.0 + sd)


def _ssim(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    mx, my = float(x.mean()), float(y.mean())
    if n > 1:
        sx = float(((x - mx) ** 2).sum() / (n - 1))
        sy = float(((y - my) ** 2).sum() / (n - 1))
        sxy = float(((x - mx) * (y - my)).sum() / (n - 1))
    else:
        sx = sy = sxy = 0.0
    a = 4.0 * mx * my * sxy
    b = (mx * mx + my * my) * (sx + sy)
    if a != 0.0:
        return a / (b + SSIM_GUARD)
    return 1.0 if b == 0.0 else 0.0


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: object-aware and region-aware terms, equally mixed.

    Degenerate ground truths fall back to intensity agreement: all-background
    scores 1 - mean(pred), all-foreground scores mean(pred).
    """
    p, g = _check_pair(pred, gt)
    y = g.mean()
    if y == 0.0:
        return float(1.0 - p.mean())
    if y == 1.0:
        return float(p.mean())

    fg = g > 0.5
    s_obj = y * _object_score(p[fg]) + (1.0 - y) * _object_score(1.0 - p[~fg])

    h, w = g.shape
    total = g.sum()
    rows, cols = np.nonzero(fg)
    cy = int(round(float(rows.sum()) / total))
    cx = int(round(float(cols.sum()) / total))
    area = float(h * w)
    s_reg = 0.0
    weights = (
        (cy * cx / area, (slice(0, cy), slice(0, cx))),
        (cy * (w - cx) / area, (slice(0, cy), slice(cx, w))),
        ((h - cy) * cx / area, (slice(cy, h), slice(0, cx))),
        ((h - cy) * (w - cx) / area, (slice(cy, h), slice(cx, w))),
    )
    for wt, sl in weights:
        if wt > 0:
            s_reg += wt * _ssim(p[sl], g[sl])

    return max(alpha * s_obj + (1.0 - alpha) * s_reg, 0.0)


def e_measure_mean(pred, gt) -> float:
    """Enhanced-alignment measure averaged over the fixed threshold sweep.

    Per threshold both maps are mean-centered; the alignment map is
    zero-guarded and the enhanced map ((align + 1)^2 / 4) is averaged over
    pixels. Degenerate ground truths score direct agreement with the
    binarized prediction.
    """
    p, g = _check_pair(pred, gt)
    n = g.size
    g_sum = g.sum()
    acc = 0.0
    for t in THRESHOLDS:
        b = (p >= t).astype(np.float64)
        if g_sum == 0.0:
            enhanced = 1.0 - b
        elif g_sum == n:
            enhanced = b
        else:
            phi_b = b - b.mean()
            phi_g = g - g.mean()
            den = phi_b * phi_b + phi_g * phi_g
            with np.errstate(divide="ignore", invalid="ignore"):
                align = np.where(den > 0, 2.0 * phi_b * phi_g / den, 0.0)
            enhanced = (align + 1.0) ** 2 / 4.0
        acc += float(enhanced.mean())
    return acc / len(THRESHOLDS)


# ---------------------------------------------------------------------------
# rollups


@dataclass(frozen=True)
class MetricSet:
    s_alpha: float
    e_m: float
    f_beta: float
    mae: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def average(full: float, missing_m1: float, missing_m2: float) -> float:
    """Mean of a metric over the three availability conditions."""
    return (full + missing_m1 + missing_m2) / 3.0


def average_drop(full: float, missing_m1: float, missing_m2: float) -> float:
    """Mean signed change of a metric under the two missing conditions."""
    return ((missing_m1 - full) + (missing_m2 - full)) / 2.0


def _lift(fn, a: MetricSet, b: MetricSet, c: MetricSet) -> MetricSet:
    return MetricSet(**{k: fn(a.as_dict()[k], b.as_dict()[k], c.as_dict()[k]) for k in a.as_dict()})


@dataclass
class EvaluationReport:
    """Per-condition metric table plus the two robustness rollup rows."""

    split: str
    n_samples: int
    conditions: dict[str, MetricSet]
    average: MetricSet
    average_drop: MetricSet
    meta: dict[str, str]

    def as_dict(self) -> dict:
        return {
            "split": self.split,
            "n_samples": self.n_samples,
            "conditions": {k: v.as_dict() for k, v in self.conditions.items()},
            "average": self.average.as_dict(),
            "average_drop": self.average_drop.as_dict(),
            "meta": dict(self.meta),
        }


def score_map(pred, gt) -> MetricSet:
    return MetricSet(
        s_alpha=s_measure(pred, gt),
        e_m=e_measure_mean(pred, gt),
        f_beta=f_measure_mean(pred, gt),
        mae=mae(pred, gt),
    )


def evaluate(state, dataset: Dataset, meta: dict[str, str] | None = None) -> EvaluationReport:
    """Score a model on every sample under all three availability conditions.

    Per-image metrics are reduced with compensated summation so dataset order
    cannot perturb the reported means.
    """
    from .trainer import predict  # local import; trainer also consumes this module's types

    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    per_condition: dict[str, MetricSet] = {}
    for cond in ALL_CONDITIONS:
        scores = [score_map(predict(state, s, cond), s.gt) for s in dataset]
        per_condition[cond.value] = MetricSet(
            **{
                k: math.fsum(ms.as_dict()[k] for ms in scores) / len(scores)
                for k in scores[0].as_dict()
            }
        )
    full = per_condition[Condition.COMPLETE.value]
    m1 = per_condition[Condition.MISSING_M1.value]
    m2 = per_condition[Condition.MISSING_M2.value]
    return EvaluationReport(
        split=dataset.split,
        n_samples=len(dataset),
        conditions=per_condition,
        average=_lift(average, full, m1, m2),
        average_drop=_lift(average_drop, full, m1, m2),
        meta=dict(meta or {}),
    )
