"""Dual-modal sample types, disk IO, synthetic data, conditions and corruption."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

NOISE_KINDS = ("gaussian", "salt_pepper", "blackout_blocks")


class Condition(enum.Enum):
    COMPLETE = "complete"
    MISSING_M1 = "missing_m1"
    MISSING_M2 = "missing_m2"


ALL_CONDITIONS = (Condition.COMPLETE, Condition.MISSING_M1, Condition.MISSING_M2)


@dataclass
class ModalityImage:
    """One modality frame: channel-first float array, values in [0, 1]."""

    pixels: np.ndarray  # (3, H, W) float32

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) pixels, got {self.pixels.shape}")

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]


@dataclass
class SaliencyMap:
    """Single-channel map in [0, 1]; ground truths are binary."""

    values: np.ndarray  # (H, W) float32

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"expected (H, W) map, got {self.values.shape}")


@dataclass
class DualModalSample:
    id: str
    m1: ModalityImage
    m2: ModalityImage
    gt: SaliencyMap
    corrupted: str | None = None  # "m1" / "m2" when a modality was synthetically degraded


@dataclass
class Dataset:
    samples: list[DualModalSample]
    split: str = "unsplit"

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> DualModalSample:
        return self.samples[i]


@dataclass
class ConditionDistribution:
    """Sampling probabilities for the three availability conditions."""

    p_complete: float = 1.0 / 3.0
    p_missing_m1: float = 1.0 / 3.0
    p_missing_m2: float = 1.0 / 3.0

    def __post_init__(self):
        probs = (self.p_complete, self.p_missing_m1, self.p_missing_m2)
        if any(p < 0 for p in probs):
            raise ValueError(f"negative condition probability in {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"condition probabilities must sum to 1, got {sum(probs)!r}")


def sample_condition(rng: np.random.Generator, dist: ConditionDistribution) -> Condition:
    u = rng.random()
    if u < dist.p_complete:
        return Condition.COMPLETE
    if u < dist.p_complete + dist.p_missing_m1:
        return Condition.MISSING_M1
    return Condition.MISSING_M2


def apply_condition(sample: DualModalSample, condition: Condition) -> DualModalSample:
    """Return the sample with the unavailable modality replaced by zeros.

    The surviving modality and ground truth are passed through untouched
    (bit-identical arrays), so COMPLETE is the identity.
    """
    if condition == Condition.COMPLETE:
        return sample
    m1, m2 = sample.m1, sample.m2
    if condition == Condition.MISSING_M1:
        m1 = ModalityImage(np.zeros_like(m1.pixels))
    else:
        m2 = ModalityImage(np.zeros_like(m2.pixels))
    return DualModalSample(id=sample.id, m1=m1, m2=m2, gt=sample.gt, corrupted=sample.corrupted)


# ---------------------------------------------------------------------------
# corruption


def inject_noise(
    img: ModalityImage,
    kind: str,
    level: float,
    rng: np.random.Generator | None = None,
) -> ModalityImage:
    """Return a corrupted copy of ``img``; ``level`` 0 is the identity.

    gaussian: additive N(0, level^2) per value. salt_pepper: each pixel is
    replaced by 0 or 1 with probability ``level``. blackout_blocks: random
    square blocks are zeroed until about ``level`` of the area is dark.
    Outputs are clipped to [0, 1].
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}, expected one of {NOISE_KINDS}")
    if level < 0:
        raise ValueError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return ModalityImage(img.pixels.copy())
    if rng is None:
        rng = np.random.default_rng()

    x = img.pixels.astype(np.float64).copy()
    _, h, w = x.shape
    if kind == "gaussian":
        x += rng.normal(0.0, level, size=x.shape)
    elif kind == "salt_pepper":
        hit = rng.random((h, w)) < min(level, 1.0)
        salt = rng.random((h, w)) < 0.5
        x[:, hit & salt] = 1.0
        x[:, hit & ~salt] = 0.0
    else:  # blackout_blocks
        target = min(level, 1.0)
        dark = np.zeros((h, w), dtype=bool)
        side = max(1, h // 4)
        for _ in range(1000):
            if dark.mean() >= target:
                break
            r = int(rng.integers(0, max(1, h - side + 1)))
            c = int(rng.integers(0, max(1, w - side + 1)))
            dark[r : r + side, c : c + side] = True
        x[:, dark] = 0.0
    return ModalityImage(np.clip(x, 0.0, 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# synthetic scenes


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo, hi = max(2.0, size / 10.0), size / 5.0
    margin = int(hi) + 1
    cy = float(rng.uniform(margin, size - margin))
    cx = float(rng.uniform(margin, size - margin))
    kind = int(rng.integers(0, 3))
    if kind == 0:  # disk
        r = float(rng.uniform(lo, hi))
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == 1:  # axis-aligned box
        ry = float(rng.uniform(lo, hi))
        rx = float(rng.uniform(lo, hi))
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    # triangle: three vertices around the center, half-plane intersection
    ang = rng.uniform(0, 2 * np.pi, size=3) + np.array([0.0, 2.1, 4.2])
    rad = rng.uniform(lo, hi, size=3) + lo
    vy = cy + rad * np.sin(ang)
    vx = cx + rad * np.cos(ang)
    mask = np.ones((size, size), dtype=bool)
    for i in range(3):
        j = (i + 1) % 3
        k = (i + 2) % 3
        # keep the side of edge (i, j) that contains vertex k
        cross = (vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i])
        ref = (vx[j] - vx[i]) * (vy[k] - vy[i]) - (vy[j] - vy[i]) * (vx[k] - vx[i])
        mask &= (cross * np.sign(ref)) >= 0
    return mask


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy / max(size - 1, 1), xx / max(size - 1, 1)


def _render_sample(rng: np.random.Generator, size: int, sid: str) -> DualModalSample:
    yy, xx = _grid(size)

    # Candidate pool: the salient shapes appear in both modalities, the
    # decoys in exactly one, drawn from the same appearance family. A single
    # modality therefore cannot tell objects from decoys; only agreement
    # across both resolves the scene.
    n_true = int(rng.integers(1, 4))
    true_masks = [_shape_mask(rng, size) for _ in range(n_true)]
    decoy_m1 = [_shape_mask(rng, size) for _ in range(int(rng.integers(1, 3)))]
    decoy_m2 = [_shape_mask(rng, size) for _ in range(int(rng.integers(1, 3)))]

    gt = np.zeros((size, size), dtype=bool)
    kept: list[np.ndarray] = []
    for m in true_masks:
        merged = gt | m
        if merged.mean() >= 0.45:  # keep foreground under half the frame
            break
        gt = merged
        kept.append(m)
    if not gt.any():  # degenerate draw: fall back to a centered disk
        cy = cx = size / 2.0
        r = size / 6.0
        gy, gx = np.mgrid[0:size, 0:size].astype(np.float64)
        gt = (gy - cy) ** 2 + (gx - cx) ** 2 <= r * r
        kept = [gt]

    # modality one: colored scene with stripe texture, shapes as textured color
    grade = rng.uniform(0.15, 0.5, size=3)[:, None, None] + 0.3 * (
        rng.random() * yy + (1 - rng.random()) * xx
    )
    freq = rng.uniform(2.0, 6.0)
    phase = rng.uniform(0, 2 * np.pi)
    stripes = 0.10 * np.sin(2 * np.pi * freq * (xx + yy) + phase)
    m1 = grade + stripes

    def paint_m1(canvas: np.ndarray, mask: np.ndarray) -> np.ndarray:
        color = rng.uniform(0.25, 0.95, size=3)[:, None, None]
        tex = 0.08 * np.sin(2 * np.pi * rng.uniform(3.0, 8.0) * xx + rng.uniform(0, 2 * np.pi))
        return np.where(mask, color + tex, canvas)

    # modality two: dark field, shapes as bright intensity blobs
    base = rng.uniform(0.05, 0.2)
    field = base + 0.15 * np.abs(np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * yy + rng.uniform(0, np.pi)))
    m2 = np.repeat(field[None], 3, axis=0)

    def paint_m2(canvas: np.ndarray, mask: np.ndarray) -> np.ndarray:
        peak = rng.uniform(0.7, 0.95)
        wobble = 0.05 * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * (xx - yy))
        return np.where(mask, peak + wobble, canvas)

    # decoys first so overlapping object pixels keep the object appearance
    for m in decoy_m1:
        m1 = paint_m1(m1, m)
    for m in decoy_m2:
        m2 = paint_m2(m2, m)
    for m in kept:
        m1 = paint_m1(m1, m)
        m2 = paint_m2(m2, m)

    m1 = np.clip(m1, 0.0, 1.0).astype(np.float32)
    m2 = np.clip(m2, 0.0, 1.0).astype(np.float32)
    return DualModalSample(
        id=sid,
        m1=ModalityImage(m1),
        m2=ModalityImage(m2),
        gt=SaliencyMap(gt.astype(np.float32)),
    )


def synth_dataset(
    seed: int,
    n_samples: int,
    size: int = 64,
    noise_fraction: float = 0.0,
    noise_kind: str = "salt_pepper",
    noise_level: float = 0.5,
    split: str = "synth",
) -> Dataset:
    """Deterministically generate a dual-modal scene set with exact masks.

    Each scene holds 1..3 geometric shapes rendered with per-modality
    appearance in both modalities, plus one or two look-alike decoy shapes
    per modality that appear in that modality only; ``noise_fraction`` of
    the samples (rounded) get exactly one modality corrupted and tagged via
    ``corrupted``.
    """
    if n_samples <= 0:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    if size < 16 or size % 16 != 0:
        raise ValueError(f"size must be a positive multiple of 16, got {size}")
    if not 0.0 <= noise_fraction <= 1.0:
        raise ValueError(f"noise_fraction must be in [0, 1], got {noise_fraction}")

    rng = np.random.default_rng([seed, _SYNTH_STREAM])
    width = max(4, len(str(n_samples - 1)))
    samples = [_render_sample(rng, size, f"{split}-{i:0{width}d}") for i in range(n_samples)]

    n_noisy = int(round(noise_fraction * n_samples))
    noisy_idx = rng.choice(n_samples, size=n_noisy, replace=False) if n_noisy else []
    for i in sorted(int(j) for j in noisy_idx):
        s = samples[i]
        which = "m1" if rng.random() < 0.5 else "m2"
        img = s.m1 if which == "m1" else s.m2
        corrupted = inject_noise(img, noise_kind, noise_level, rng)
        if which == "m1":
            samples[i] = DualModalSample(s.id, corrupted, s.m2, s.gt, corrupted="m1")
        else:
            samples[i] = DualModalSample(s.id, s.m1, corrupted, s.gt, corrupted="m2")
    return Dataset(samples=samples, split=split)


_SYNTH_STREAM = 0x5CE  # keeps scene generation independent of other seeded streams


# ---------------------------------------------------------------------------
# disk layout: <root>/<m1 folder>/<name>.png etc., shared basenames


DEFAULT_FOLDERS = ("M1", "M2", "GT")


def load_dataset(
    root: str | Path,
    size: int | None = None,
    folders: tuple[str, str, str] = DEFAULT_FOLDERS,
    split: str | None = None,
) -> Dataset:
    """Load a dataset from three sibling folders of same-named PNGs.

    Images are rescaled to ``size`` (bilinear) when given; ground truths are
    binarized at 0.5 after scaling. A basename present in one folder but
    missing in another is a hard error naming the orphan.
    """
    root = Path(root)
    dirs = [root / f for f in folders]
    for d in dirs:
        if not d.is_dir():
            raise FileNotFoundError(f"dataset folder not found: {d}")
    names = [{p.stem for p in d.iterdir() if p.suffix.lower() == ".png"} for d in dirs]
    union = sorted(set().union(*names))
    if not union:
        raise ValueError(f"no PNG samples under {root}")
    for stem in union:
        for d, present in zip(dirs, names):
            if stem not in present:
                raise FileNotFoundError(f"sample {stem!r} has no counterpart in {d}")

    samples = []
    for stem in union:
        m1 = _read_image(dirs[0] / f"{stem}.png", size)
        m2 = _read_image(dirs[1] / f"{stem}.png", size)
        gt = _read_mask(dirs[2] / f"{stem}.png", size)
        samples.append(DualModalSample(id=stem, m1=m1, m2=m2, gt=gt))
    return Dataset(samples=samples, split=split or root.name)


def save_dataset(ds: Dataset, root: str | Path, folders: tuple[str, str, str] = DEFAULT_FOLDERS) -> None:
    """Write the dataset as 8-bit PNGs in the three-folder layout."""
    root = Path(root)
    for f in folders:
        (root / f).mkdir(parents=True, exist_ok=True)
    for s in ds:
        _write_image(root / folders[0] / f"{s.id}.png", s.m1.pixels)
        _write_image(root / folders[1] / f"{s.id}.png", s.m2.pixels)
        gt8 = (np.round(np.clip(s.gt.values, 0, 1)) * 255).astype(np.uint8)
        Image.fromarray(gt8, mode="L").save(root / folders[2] / f"{s.id}.png")


def _read_image(path: Path, size: int | None) -> ModalityImage:
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return ModalityImage(arr.transpose(2, 0, 1))

def _read_mask(path: Path, size: int | None) -> SaliencyMap:
    img = Image.open(path).convert("L")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return SaliencyMap((arr >= 0.5).astype(np.float32))

def _write_image(path: Path, chw: np.ndarray) -> None:
    arr = (np.round(np.clip(chw, 0, 1) * 255)).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)
