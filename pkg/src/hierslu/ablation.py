"""Ablation table over model/training variants, plus the DropFrame sweep."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError
from .evaluation import evaluate
from .losses import LossWeights
from .model import PreparedConversation
from .training import benchmark_dropframe, train

log = logging.getLogger(__name__)

# row name -> (regime, euclidean on, contrastive on, conversation variant, utterance only)
ROWS = {
    "utterance-only": ("HIER-S", False, False, "transformer", True),
    "HIER-S": ("HIER-S", False, False, "transformer", False),
    "HIER-T": ("HIER-T", False, False, "transformer", False),
    "HIER-ST": ("HIER-ST", False, False, "transformer", False),
    "HIER-ST+EUC": ("HIER-ST", True, False, "transformer", False),
    "HIER-ST+CON": ("HIER-ST", False, True, "transformer", False),
    "HIER-ST+EUC+CON": ("HIER-ST", True, True, "transformer", False),
    "HIER-ST+CON (LSTM g)": ("HIER-ST", False, True, "recurrent", False),
}


def row_configs(cfg: ExperimentConfig, row: str, seed: int):
    if row not in ROWS:
        raise ConfigError(f"unknown ablation row {row!r}; known rows: {', '.join(ROWS)}")
    regime, euc, con, variant, utterance_only = ROWS[row]
    model_cfg = dataclasses.replace(
        cfg.model_config(), conversation_variant=variant, n_max=1 if utterance_only else cfg.model.n_max
    )
    base = cfg.training_config(seed)
    weights = LossWeights(
        cfg.losses.euclidean if euc else 0.0, cfg.losses.contrastive if con else 0.0, cfg.losses.temperature
    )
    return model_cfg, dataclasses.replace(base, regime=regime, losses=weights)


def deployed_parameter_count(model, modality: str) -> int:
    encoder = model.speech_encoder if modality == "speech" else model.text_encoder
    return sum(p.numel() for m in (encoder, model.conversation, model.classifier) for p in m.parameters())


def run_ablation(cfg: ExperimentConfig, train_convs: Sequence[PreparedConversation],
                 dev_convs: Sequence[PreparedConversation], test_convs: Sequence[PreparedConversation],
                 rows: Sequence[str] | None = None, seeds: Sequence[int] | None = None) -> list[dict]:
    rows = list(cfg.ablation.rows if rows is None else rows)
    seeds = list(cfg.ablation.seeds if seeds is None else seeds)
    table = []
    for row in rows:
        runs = []
        for seed in seeds:
            model_cfg, train_cfg = row_configs(cfg, row, seed)
            t0 = time.perf_counter()
            result = train(model_cfg, train_cfg, train_convs, dev_convs)
            report = evaluate(result.model, test_convs, train_cfg.threshold, train_cfg.eval_modality)
            runs.append({
                "seed": seed,
                "test_macro_f1": report.macro_f1,
                "dev_macro_f1": result.state.best_metric,
                "best_epoch": result.state.best_epoch,
                "epochs_run": result.state.epoch,
                "wall_seconds": time.perf_counter() - t0,
            })
            log.info("%s seed %d: test macro-F1 %.4f", row, seed, report.macro_f1)
        scores = np.array([r["test_macro_f1"] for r in runs])
        table.append({
            "row": row,
            "mean_test_macro_f1": float(scores.mean()),
            "std_test_macro_f1": float(scores.std()),
            "min_test_macro_f1": float(scores.min()),
            "max_test_macro_f1": float(scores.max()),
            "parameters": deployed_parameter_count(result.model, train_cfg.eval_modality),
            "runs": runs,
        })
    return table


def run_dropframe_sweep(cfg: ExperimentConfig, train_convs, dev_convs) -> list[dict]:
    return benchmark_dropframe(
        cfg.model_config(), cfg.training_config(), train_convs, dev_convs,
        list(cfg.ablation.dropframe_lengths), cfg.ablation.dropframe_epochs,
    )


def write_table_csv(path, table: list[dict]) -> None:
    cols = ["row", "mean_test_macro_f1", "std_test_macro_f1", "min_test_macro_f1", "max_test_macro_f1", "parameters"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ["seeds"])
        for r in table:
            w.writerow([r[c] for c in cols] + [len(r["runs"])])


def write_sweep_csv(path, sweep: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["max_len", "epoch_seconds", "dev_macro_f1"])
        for r in sweep:
            w.writerow(["all" if r["max_len"] is None else r["max_len"], r["epoch_seconds"], r["dev_macro_f1"]])


def format_table(table: list[dict]) -> str:
    lines = [f"{'row':<24} {'macro-F1 (mean +- std)':>24} {'params':>8}"]
    for r in table:
        lines.append(
            f"{r['row']:<24} {100 * r['mean_test_macro_f1']:>15.1f} +- {100 * r['std_test_macro_f1']:<5.1f} {r['parameters']:>8}"
        )
    return "\n".join(lines)
