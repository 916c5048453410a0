"""Image/text embedding interface plus the deterministic stub backend.

The stub stands in for a pretrained vision-language model: images are
average-pooled to a fixed grid, given a sharpness statistic and a constant
bias feature, then pushed through a seeded random projection; text is summed
from per-token hash vectors. Both paths L2-normalize. A real backend only
needs to satisfy :class:`VisionLanguageEmbedder`.
"""
from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np
import torch

from .data import ModalityImage

Embedding = torch.Tensor  # (D,) float64, unit norm


@runtime_checkable
class VisionLanguageEmbedder(Protocol):
    dim: int

    def embed_image(self, img: ModalityImage) -> Embedding: ...

    def embed_text(self, text: str) -> Embedding: ...


def _mean_abs_laplacian(x: np.ndarray) -> float:
    """Mean |4-neighbour Laplacian| over channels, zero-padded borders."""
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    lap = p[:, 1:-1, 2:] + p[:, 1:-1, :-2] + p[:, 2:, 1:-1] + p[:, :-2, 1:-1] - 4.0 * x
    return float(np.abs(lap).mean())


class StubEmbedder:
    """Seeded stand-in embedder; deterministic for a given seed.

    The appended sharpness feature makes the image path respond to pixel
    corruption, and the constant bias feature keeps all-zero (missing
    modality) frames away from the zero vector so cosine scores stay defined.
    """

    def __init__(self, dim: int = 512, pool_grid: int = 8, sharpness_weight: float = 2.0, seed: int = 0):
        if dim <= 0 or pool_grid <= 0:
            raise ValueError("dim and pool_grid must be positive")
        self.dim = dim
        self.pool_grid = pool_grid
        self.sharpness_weight = sharpness_weight
        self.seed = seed
        in_dim = 3 * pool_grid * pool_grid + 2
        rng = np.random.default_rng([seed, 0xE3BED])
        self._proj = rng.standard_normal((dim, in_dim)) / np.sqrt(in_dim)

    def _image_features(self, img: ModalityImage) -> np.ndarray:
        x = img.pixels.astype(np.float64)
        _, h, w = x.shape
        g = self.pool_grid
        if h % g != 0 or w % g != 0:
            raise ValueError(f"image size {h}x{w} not divisible by pool grid {g}")
        pooled = x.reshape(3, g, h // g, g, w // g).mean(axis=(2, 4))
        sharp = self.sharpness_weight * _mean_abs_laplacian(x)
        return np.concatenate([pooled.ravel(), [sharp, 1.0]])

    def embed_image(self, img: ModalityImage) -> Embedding:
        z = self._proj @ self._image_features(img)
        return torch.from_numpy(z / np.linalg.norm(z))

    def embed_text(self, text: str) -> Embedding:
        tokens = [t for t in "".join(c if c.isalnum() else " " for c in text.lower()).split() if t]
        if not tokens:
            raise ValueError(f"text {text!r} has no tokens")
        acc = np.zeros(self.dim)
        for tok in tokens:
            digest = hashlib.sha256(f"{self.seed}:{tok}".encode()).digest()
            acc += np.random.default_rng(int.from_bytes(digest[:8], "big")).standard_normal(self.dim)
        norm = np.linalg.norm(acc)
        if norm == 0:
            raise ValueError("degenerate text embedding")
        return torch.from_numpy(acc / norm)
