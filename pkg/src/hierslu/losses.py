"""Supervised and cross-modal objectives.

The cross-modal losses take current-utterance embeddings from both
branches and treat the text side as a constant, so they only ever send
gradient into the speech encoder.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, NumericalDomainError


@dataclass(frozen=True)
class LossWeights:
    euclidean: float = 1.0
    contrastive: float = 1.0
    temperature: float = 0.07

    def __post_init__(self):
        if self.euclidean < 0 or self.contrastive < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


class Classifier(nn.Module):
    """Affine head shared by both modality paths."""

    def __init__(self, d_model: int, num_labels: int):
        super().__init__()
        self.linear = nn.Linear(d_model, num_labels)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return self.linear(c)


def classify(c: torch.Tensor, head: Classifier) -> torch.Tensor:
    return head(c)


def bce_multilabel(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over batch and labels, from raw logits.

    Uses -[y log s(z) + (1-y) log(1-s(z))] = max(z,0) - y z + log(1 + e^{-|z|}).
    """
    if logits.shape != targets.shape:
        raise ConfigError(f"logits {tuple(logits.shape)} and targets {tuple(targets.shape)} differ in shape")
    y = targets.to(logits.dtype)
    per = torch.clamp(logits, min=0) - y * logits + torch.log1p(torch.exp(-logits.abs()))
    return per.mean()


def euclidean_loss(speech: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    """Mean L2 distance between paired embeddings; text side detached."""
    if speech.shape != text.shape:
        raise ConfigError(f"embedding batches differ in shape: {tuple(speech.shape)} vs {tuple(text.shape)}")
    diff = speech - text.detach()
    return torch.linalg.vector_norm(diff, dim=-1).mean()


def _unit_rows(x: torch.Tensor, side: str) -> torch.Tensor:
    norms = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    zero = (norms.squeeze(-1) == 0).nonzero()
    if len(zero):
        raise NumericalDomainError(f"zero-norm {side} embedding in contrastive loss", batch_index=int(zero[0]))
    return x / norms


def similarity_matrix(speech: torch.Tensor, text: torch.Tensor, temperature: float) -> torch.Tensor:
    return _unit_rows(speech, "speech") @ _unit_rows(text, "text").T / temperature


def contrastive_loss(
    speech: torch.Tensor, text: torch.Tensor, temperature: float = 0.07, detach_text: bool = True
) -> torch.Tensor:
    """Symmetric temperature-scaled cosine contrastive loss.

    Row i of the similarity matrix scores speech i against every text item
    and column i scores text i against every speech item; the matched pair
    sits on the diagonal in both directions.
    """
    if speech.shape != text.shape:
        raise ConfigError(f"embedding batches differ in shape: {tuple(speech.shape)} vs {tuple(text.shape)}")
    if speech.shape[0] < 1:
        raise ConfigError("contrastive loss needs a non-empty batch")
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if detach_text:
        text = text.detach()
    s = similarity_matrix(speech, text, temperature)
    diag = torch.diagonal(s)
    row = diag - torch.logsumexp(s, dim=1)
    col = diag - torch.logsumexp(s, dim=0)
    return -(row + col).sum() / (2 * s.shape[0])
