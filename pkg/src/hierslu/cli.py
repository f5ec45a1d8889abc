"""Command-line entry point: gen-data, train, eval, gradcheck, ablate.

All outputs go under ``output_dir`` with fixed names:

    corpus/{train,dev,test}.jsonl, corpus/manifest.json   gen-data
    checkpoint.npz, metrics.jsonl, train_summary.json     train
    eval_report.json, eval_report.txt                     eval
    gradcheck.json                                        gradcheck
    ablation.json, ablation.csv, dropframe.csv            ablate
    resolved_config.json                                  every command
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import ablation
from .config import ExperimentConfig, load_config, save_config
from .data import generate_corpus, read_corpus, write_corpus
from .errors import DataError, HierSLUError
from .evaluation import evaluate
from .gradcheck import format_report, run_gradcheck
from .model import load_checkpoint, parameter_checksum, prepare, save_checkpoint
from .training import train

log = logging.getLogger("hierslu")

CORPUS_DIR = "corpus"
CHECKPOINT = "checkpoint.npz"
METRICS = "metrics.jsonl"
RESOLVED_CONFIG = "resolved_config.json"


class GradcheckFailed(HierSLUError):
    category = "gradcheck"


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / RESOLVED_CONFIG)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_corpus(out: Path):
    corpus_dir = out / CORPUS_DIR
    if not (corpus_dir / "manifest.json").exists():
        raise DataError(f"no corpus under {corpus_dir}; run gen-data first")
    return read_corpus(corpus_dir)


def cmd_gen_data(cfg: ExperimentConfig) -> Path:
    out = _out(cfg)
    corpus = generate_corpus(cfg.data, cfg.seed)
    write_corpus(out / CORPUS_DIR, corpus)
    print(f"wrote {len(corpus.train)}/{len(corpus.dev)}/{len(corpus.test)} conversations to {out / CORPUS_DIR}")
    return out / CORPUS_DIR


def cmd_train(cfg: ExperimentConfig):
    out = _out(cfg)
    corpus = _load_corpus(out)
    window = cfg.features.delta_window
    result = train(cfg.model_config(), cfg.training_config(), prepare(corpus.train, window),
                   prepare(corpus.dev, window), log_path=out / METRICS)
    save_checkpoint(out / CHECKPOINT, result.model, {"best_epoch": result.state.best_epoch,
                                                      "regime": cfg.training.regime})
    best = result.history[result.state.best_epoch - 1]
    summary = {
        "best_epoch": result.state.best_epoch,
        "epochs_run": result.state.epoch,
        "best_dev_macro_f1": result.state.best_metric,
        "train_macro_f1_at_best": best.get("train_macro_f1"),
        "parameter_sha256": parameter_checksum(result.model),
    }
    _write_json(out / "train_summary.json", summary)
    print(f"best epoch {summary['best_epoch']} of {summary['epochs_run']}: dev macro-F1 {summary['best_dev_macro_f1']:.4f}")
    return result


def cmd_eval(cfg: ExperimentConfig, checkpoint=None):
    out = _out(cfg)
    corpus = _load_corpus(out)
    model, meta = load_checkpoint(checkpoint or out / CHECKPOINT, expected=cfg.model_config())
    modality = "text" if meta["extra"].get("regime") == "HIER-T" else "speech"
    report = evaluate(model, prepare(corpus.split(cfg.eval.split), cfg.features.delta_window),
                      cfg.eval.threshold, modality, cfg.eval.context_len)
    (out / "eval_report.json").write_text(report.to_json() + "\n")
    (out / "eval_report.txt").write_text(report.to_table() + "\n")
    print(report.to_table())
    return report


def cmd_gradcheck(cfg: ExperimentConfig):
    out = _out(cfg)
    g = cfg.gradcheck
    results = run_gradcheck(g.d_model, g.base_dim, g.hidden, g.vocab_size, g.batch, g.max_frames,
                            g.step, g.tolerance, cfg.seed)
    _write_json(out / "gradcheck.json", {
        "tolerance": g.tolerance,
        "step": g.step,
        "passed": all(r.passed for r in results),
        "tensors": [dataclasses.asdict(r) for r in results],
    })
    print(format_report(results))
    failed = [r for r in results if not r.passed]
    if failed:
        raise GradcheckFailed(f"{len(failed)} of {len(results)} tensors exceeded tolerance {g.tolerance}")
    return results


def cmd_ablate(cfg: ExperimentConfig):
    out = _out(cfg)
    corpus = _load_corpus(out)
    w = cfg.features.delta_window
    tr, dv, te = prepare(corpus.train, w), prepare(corpus.dev, w), prepare(corpus.test, w)
    table = ablation.run_ablation(cfg, tr, dv, te)
    sweep = ablation.run_dropframe_sweep(cfg, tr, dv) if cfg.ablation.dropframe_lengths else []
    _write_json(out / "ablation.json", {"rows": table, "dropframe": sweep})
    ablation.write_table_csv(out / "ablation.csv", table)
    ablation.write_sweep_csv(out / "dropframe.csv", sweep)
    print(ablation.format_table(table))
    for r in sweep:
        l = "all" if r["max_len"] is None else r["max_len"]
        print(f"DropFrame l={l:<5} {r['epoch_seconds']:.3f} s/epoch  dev macro-F1 {r['dev_macro_f1']:.4f}")
    return table, sweep


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierslu", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="experiment config (JSON); defaults apply when omitted")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scalar field, e.g. training.max_epochs=5")
        if name == "eval":
            p.add_argument("--checkpoint", help=f"checkpoint path (default: <output_dir>/{CHECKPOINT})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        else:
            COMMANDS[args.command](cfg)
    except HierSLUError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
