"""Language-driven quality assessment: prompt, cosine scores, fusion weights."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .data import ModalityImage
from .embedder import Embedding, VisionLanguageEmbedder

# score floor before normalization; keeps weights defined when a cosine
# goes non-positive (gradients vanish below the floor by construction)
ALPHA_FLOOR = 1e-6

DEFAULT_PROMPT_TEXT = "A photo of high quality."


class LearnablePrompt(nn.Module):
    """Additive prompt vector, zero-initialized so it starts as the identity."""

    def __init__(self, dim: int = 512):
        super().__init__()
        self.omega = nn.Parameter(torch.zeros(dim, dtype=torch.float64))

    @property
    def dim(self) -> int:
        return self.omega.numel()


@dataclass(frozen=True)
class QualityScores:
    alpha_m1: float
    alpha_m2: float


@dataclass(frozen=True)
class FusionWeights:
    beta_m1: float
    beta_m2: float


def apply_prompt(text_embedding: Embedding, prompt: LearnablePrompt) -> torch.Tensor:
    """Shift the text embedding by the prompt vector (linear in the prompt)."""
    if text_embedding.numel() != prompt.dim:
        raise ValueError(f"dim mismatch: embedding {text_embedding.numel()} vs prompt {prompt.dim}")
    return text_embedding.to(prompt.omega.dtype) + prompt.omega


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na = torch.linalg.vector_norm(a)
    nb = torch.linalg.vector_norm(b)
    if na.item() == 0.0 or nb.item() == 0.0:
        raise ValueError("cosine undefined for a zero-norm embedding")
    return (a * b).sum() / (na * nb)


def quality_score(img_embedding: Embedding, prompted_text: torch.Tensor) -> float:
    """Cosine similarity in [-1, 1] between image and prompted text."""
    return float(_cosine(img_embedding, prompted_text).detach())


def fusion_weights_t(alpha_m1: torch.Tensor, alpha_m2: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable weight pair: floor-clamped scores normalized to sum 1."""
    c1 = torch.clamp(alpha_m1, min=ALPHA_FLOOR)
    c2 = torch.clamp(alpha_m2, min=ALPHA_FLOOR)
    total = c1 + c2
    return c1 / total, c2 / total


def fusion_weights(scores: QualityScores) -> FusionWeights:
    b1, b2 = fusion_weights_t(
        torch.tensor(scores.alpha_m1, dtype=torch.float64),
        torch.tensor(scores.alpha_m2, dtype=torch.float64),
    )
    return FusionWeights(beta_m1=float(b1), beta_m2=float(b2))


def assess_t(
    m1: ModalityImage,
    m2: ModalityImage,
    emb: VisionLanguageEmbedder,
    prompt: LearnablePrompt,
    text: str = DEFAULT_PROMPT_TEXT,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Tensor-valued assessment; gradients flow into the prompt only."""
    prompted = apply_prompt(emb.embed_text(text), prompt)
    a1 = _cosine(emb.embed_image(m1), prompted)
    a2 = _cosine(emb.embed_image(m2), prompted)
    return fusion_weights_t(a1, a2)


def lqa_assess(
    m1: ModalityImage,
    m2: ModalityImage,
    emb: VisionLanguageEmbedder,
    prompt: LearnablePrompt,
    text: str = DEFAULT_PROMPT_TEXT,
) -> FusionWeights:
    """One quality-weighted fusion decision for a modality pair."""
    with torch.no_grad():
        b1, b2 = assess_t(m1, m2, emb, prompt, text)
    return FusionWeights(beta_m1=float(b1), beta_m2=float(b2))
