"""Multilabel metrics and checkpoint evaluation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ConfigError
from .model import HierarchicalModel, PreparedConversation, make_batch


@dataclass
class EvalReport:
    macro_f1: float
    precision: list
    recall: list
    f1: list
    support: list
    predicted: list
    zero_support: list  # classes with no positives in the targets
    threshold: Optional[float] = None
    num_examples: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'class':>5}  {'support':>7}  {'pred':>5}  {'prec':>6}  {'recall':>6}  {'f1':>6}"]
        for c in range(len(self.f1)):
            flag = "  (no support)" if self.zero_support[c] else ""
            lines.append(
                f"{c:>5}  {self.support[c]:>7}  {self.predicted[c]:>5}  "
                f"{self.precision[c]:>6.3f}  {self.recall[c]:>6.3f}  {self.f1[c]:>6.3f}{flag}"
            )
        lines.append(f"macro-F1 {self.macro_f1:.4f} over {len(self.f1)} classes, {self.num_examples} examples")
        if self.threshold is not None:
            lines.append(f"threshold {self.threshold}")
        return "\n".join(lines)


def macro_f1(predictions, targets, threshold: Optional[float] = None) -> EvalReport:
    """Per-class and macro F1 for binary (n, L) prediction/target matrices.

    A class with P + R = 0 scores 0, including classes that have neither
    support nor predictions; such classes are listed in ``zero_support``.
    """
    pred = np.asarray(predictions).astype(bool)
    gold = np.asarray(targets).astype(bool)
    if pred.shape != gold.shape or pred.ndim != 2:
        raise ConfigError(f"predictions {pred.shape} and targets {gold.shape} must be matching 2-D arrays")
    tp = (pred & gold).sum(0).astype(float)
    n_pred = pred.sum(0).astype(float)
    n_gold = gold.sum(0).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(n_pred > 0, tp / n_pred, 0.0)
        recall = np.where(n_gold > 0, tp / n_gold, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return EvalReport(
        macro_f1=float(f1.mean()) if f1.size else 0.0,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=n_gold.astype(int).tolist(),
        predicted=n_pred.astype(int).tolist(),
        zero_support=(n_gold == 0).tolist(),
        threshold=threshold,
        num_examples=int(pred.shape[0]),
    )


@torch.no_grad()
def predict_proba(
    model: HierarchicalModel,
    convs: Sequence[PreparedConversation],
    modality: str = "speech",
    n_max: Optional[int] = None,
    batch_size: int = 16,
):
    """Sigmoid scores and targets for every context, dropout and DropFrame off.

    ``n_max`` may be set below the model's own cap to truncate history.
    """
    n_max = model.cfg.n_max if n_max is None else n_max
    was_training = model.training
    model.eval()
    probs, labels = [], []
    try:
        for start in range(0, len(convs), batch_size):
            batch = make_batch(convs[start : start + batch_size], n_max)
            _, _, logits = model.branch(batch, modality)
            probs.append(torch.sigmoid(logits).double().numpy())
            labels.append(batch.labels)
    finally:
        model.train(was_training)
    return np.concatenate(probs), np.concatenate(labels)


def evaluate(
    model: HierarchicalModel,
    convs: Sequence[PreparedConversation],
    threshold: float = 0.5,
    modality: str = "speech",
    n_max: Optional[int] = None,
) -> EvalReport:
    if not convs:
        raise ConfigError("cannot evaluate an empty split")
    probs, labels = predict_proba(model, convs, modality, n_max)
    return macro_f1(probs >= threshold, labels, threshold)
