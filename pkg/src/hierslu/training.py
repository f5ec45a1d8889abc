"""Training regimes, early stopping, and the DropFrame timing benchmark."""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ConfigError
from .evaluation import evaluate
from .features import DropFrameConfig
from .losses import LossWeights, bce_multilabel, contrastive_loss, euclidean_loss
from .model import Batch, HierarchicalModel, ModelConfig, PreparedConversation, make_batch

log = logging.getLogger(__name__)

REGIMES = ("HIER-ST", "HIER-S", "HIER-T")
REGIME_BUCKETS = {
    "HIER-S": ("speech_encoder", "conversation", "classifier"),
    "HIER-T": ("text_encoder", "conversation", "classifier"),
    "HIER-ST": ("speech_encoder", "text_encoder", "conversation", "classifier"),
}


@dataclass(frozen=True)
class TrainingConfig:
    regime: str = "HIER-ST"
    learning_rate: float = 1e-3
    batch_size: int = 4  # conversations per mini-batch
    max_epochs: int = 60
    patience: int = 10
    seed: int = 0
    dropframe: DropFrameConfig = field(default_factory=DropFrameConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    freeze_speech_encoder: bool = False
    freeze_text_encoder: bool = False
    grad_clip: float = 5.0
    crossmodal_on_history: bool = False
    threshold: float = 0.5
    log_train_f1: bool = True

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive")

    @property
    def eval_modality(self) -> str:
        return "text" if self.regime == "HIER-T" else "speech"

    def needs_transcripts(self) -> bool:
        return self.regime in ("HIER-T", "HIER-ST")


class EarlyStopping:
    """Tracks the best metric; signals a stop ``patience`` epochs after it."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record an epoch's metric. Returns True when it is a new best."""
        if metric > self.best:
            self.best, self.best_epoch = metric, epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


@dataclass
class TrainState:
    model: HierarchicalModel
    optimizer: torch.optim.Optimizer
    epoch: int = 0
    best_metric: float = -np.inf
    best_epoch: int = 0
    best_state: Optional[dict] = None


@dataclass
class TrainResult:
    model: HierarchicalModel  # holds the best-epoch weights
    state: TrainState
    history: list


def trainable_parameters(model: HierarchicalModel, cfg: TrainingConfig) -> list:
    buckets = list(REGIME_BUCKETS[cfg.regime])
    if cfg.freeze_speech_encoder and "speech_encoder" in buckets:
        buckets.remove("speech_encoder")
    if cfg.freeze_text_encoder and "text_encoder" in buckets:
        buckets.remove("text_encoder")
    return [p for b in buckets for p in model.bucket(b).parameters()]


def _crossmodal_pairs(batch: Batch, history: bool) -> torch.Tensor:
    if not history:
        return torch.as_tensor(batch.target)
    idx = [batch.context_index[j, :n] for j, n in enumerate(batch.context_lengths)]
    return torch.as_tensor(np.concatenate(idx))


def compute_losses(model: HierarchicalModel, batch: Batch, regime: str, weights: LossWeights,
                   crossmodal_on_history: bool = False, text_anchor: Optional[torch.Tensor] = None) -> dict:
    """Loss components plus ``total`` for one batch under a regime.

    Under HIER-ST: bce_speech + bce_text + w_euc * euclidean + w_con * contrastive.
    ``text_anchor`` replaces the text utterance embeddings inside the
    cross-modal terms (they are detached either way); finite-difference
    checks pass a frozen copy so the perturbed objective matches.
    """
    targets = torch.as_tensor(batch.labels)
    out = {}
    total = 0.0
    if regime in ("HIER-S", "HIER-ST"):
        u_s, _, logits_s = model.branch(batch, "speech")
        out["bce_speech"] = bce_multilabel(logits_s, targets)
        total = total + out["bce_speech"]
    if regime in ("HIER-T", "HIER-ST"):
        u_t, _, logits_t = model.branch(batch, "text")
        out["bce_text"] = bce_multilabel(logits_t, targets)
        total = total + out["bce_text"]
    if regime == "HIER-ST":
        pairs = _crossmodal_pairs(batch, crossmodal_on_history)
        anchor = u_t if text_anchor is None else text_anchor
        if weights.euclidean > 0:
            out["euclidean"] = euclidean_loss(u_s[pairs], anchor[pairs])
            total = total + weights.euclidean * out["euclidean"]
        if weights.contrastive > 0:
            out["contrastive"] = contrastive_loss(u_s[pairs], anchor[pairs], weights.temperature)
            total = total + weights.contrastive * out["contrastive"]
    out["total"] = total
    return out


def check_transcripts(convs: Sequence[PreparedConversation], cfg: TrainingConfig) -> None:
    if not cfg.needs_transcripts():
        return
    for conv in convs:
        if any(t is None for t in conv.tokens):
            raise ConfigError(f"regime {cfg.regime} needs transcripts; conversation {conv.id} lacks them")


def train_epoch(state: TrainState, train: Sequence[PreparedConversation], cfg: TrainingConfig,
                rng: np.random.Generator) -> dict:
    model = state.model
    params = [p for g in state.optimizer.param_groups for p in g["params"]]
    model.train()
    order = rng.permutation(len(train))
    sums: dict = {}
    n_batches = 0
    for start in range(0, len(order), cfg.batch_size):
        convs = [train[i] for i in order[start : start + cfg.batch_size]]
        batch = make_batch(convs, model.cfg.n_max, cfg.dropframe, rng)
        losses = compute_losses(model, batch, cfg.regime, cfg.losses, cfg.crossmodal_on_history)
        state.optimizer.zero_grad(set_to_none=True)
        losses["total"].backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        state.optimizer.step()
        for k, v in losses.items():
            sums[k] = sums.get(k, 0.0) + float(v.detach())
        n_batches += 1
    return {k: v / n_batches for k, v in sums.items()}


def train(
    model_cfg: ModelConfig,
    cfg: TrainingConfig,
    train_convs: Sequence[PreparedConversation],
    dev_convs: Sequence[PreparedConversation],
    log_path: Optional[Path] = None,
    early_stopping: bool = True,
) -> TrainResult:
    """Mini-batch Adam under the configured regime; returns the best-dev checkpoint.

    Deterministic given ``cfg.seed`` (model init, shuffling, dropout, DropFrame).
    """
    check_transcripts(train_convs, cfg)
    check_transcripts(dev_convs, cfg)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = HierarchicalModel(model_cfg)
    params = trainable_parameters(model, cfg)
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    state = TrainState(model, optimizer)
    stopper = EarlyStopping(cfg.patience)
    history = []
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            losses = train_epoch(state, train_convs, cfg, rng)
            train_seconds = time.perf_counter() - t0
            dev = evaluate(model, dev_convs, cfg.threshold, cfg.eval_modality)
            record = {"epoch": epoch, "losses": losses, "dev_macro_f1": dev.macro_f1}
            if cfg.log_train_f1:
                record["train_macro_f1"] = evaluate(model, train_convs, cfg.threshold, cfg.eval_modality).macro_f1
            record["train_seconds"] = train_seconds
            record["wall_seconds"] = time.perf_counter() - t0
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            log.info("epoch %d loss %.4f dev macro-F1 %.4f", epoch, losses["total"], dev.macro_f1)
            state.epoch = epoch
            if stopper.update(epoch, dev.macro_f1):
                state.best_metric, state.best_epoch = dev.macro_f1, epoch
                state.best_state = copy.deepcopy(model.state_dict())
            if early_stopping and stopper.should_stop(epoch):
                break
    finally:
        if log_fh:
            log_fh.close()
    model.load_state_dict(state.best_state)
    return TrainResult(model, state, history)


def benchmark_dropframe(
    model_cfg: ModelConfig,
    cfg: TrainingConfig,
    train_convs: Sequence[PreparedConversation],
    dev_convs: Sequence[PreparedConversation],
    lengths: Sequence[Optional[int]],
    epochs: int = 3,
) -> list[dict]:
    """Fixed-epoch training per DropFrame length; ``None`` disables DropFrame.

    Epoch time covers the optimisation pass only, not evaluation.
    """
    rows = []
    for l in lengths:
        df = DropFrameConfig(l, True) if l is not None else DropFrameConfig(1, False)
        run_cfg = _replace(cfg, dropframe=df, max_epochs=epochs, log_train_f1=False)
        result = train(model_cfg, run_cfg, train_convs, dev_convs, early_stopping=False)
        times = [h["train_seconds"] for h in result.history]
        rows.append({
            "max_len": l,
            "epoch_seconds": float(np.mean(times)),
            "dev_macro_f1": result.state.best_metric,
        })
    return rows


def _replace(cfg, **changes):
    from dataclasses import replace

    return replace(cfg, **changes)
