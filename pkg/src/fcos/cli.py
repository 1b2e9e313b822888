"""Command-line entry point: `fcos <subcommand> [flags]`."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, FcosError
from .metrics import evaluate as evaluate_model
from .pipeline import Pipeline

log = logging.getLogger("fcos")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="experiment config file (INI)")
    p.add_argument("--seed", type=int, default=None, help="override every section seed")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default: $FCOS_OUT or ./fcos-out)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads for parallel-safe stages (1 = bitwise mode)")
    p.add_argument("--resume", type=Path, default=None,
                   help="reuse matching stage artifacts from this run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcos",
        description="Two-stage pruning for 1D signal classifiers: "
        "channel fusion, then layer-collapse diagnosis.",
    )
    _common_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        return p

    add("gen-data", "generate (or reuse) the synthetic I/Q dataset")
    add("train", "train the reference model on the dataset")
    add("prune-channels", "stage 1: similarity-clustered channel fusion")
    add("lacd", "stage 2: probe, diagnose collapse, remove layers, fine-tune")
    p = add("finetune", "fine-tune an arbitrary checkpoint")
    p.add_argument("--model", type=Path, required=True, help="checkpoint to fine-tune")
    p.add_argument("--epochs", type=int, default=None, help="override fine-tune epochs")
    p = add("evaluate", "evaluate a checkpoint on the test split")
    p.add_argument("--model", type=Path, default=None,
                   help="checkpoint to evaluate (default: final, else baseline)")
    p = add("baseline", "run a comparison pruner through the same harness")
    p.add_argument("--method", default=None,
                   choices=["l1-channel", "random-layer", "probe-layer"],
                   help="override [baseline] method")
    add("report", "emit report CSV/markdown and figures from recorded results")
    add("run", "full pipeline: data, train, prune, lacd, report")
    return parser


def _pipeline(args) -> Pipeline:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.override_seed(args.seed)
    out = args.out or Path(os.environ.get("FCOS_OUT", "fcos-out"))
    return Pipeline(cfg, out, workers=args.workers, resume=args.resume)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        pipe = _pipeline(args)
        if args.command == "gen-data":
            ds = pipe.ensure_dataset()
            print(f"dataset ready: {ds.n} samples, classes={ds.class_names}")
        elif args.command == "train":
            model = pipe.ensure_baseline()
            acc, _ = evaluate_model(model, pipe.ensure_dataset(), "test")
            print(f"baseline test accuracy: {acc:.4f}")
        elif args.command == "prune-channels":
            pipe.ensure_stage1()
            print("stage-1 pruned checkpoint written")
        elif args.command == "lacd":
            pipe.ensure_lacd()
            print("layer-collapse diagnosis complete; final checkpoint written")
        elif args.command == "finetune":
            path = pipe.finetune(args.model, args.epochs)
            print(f"fine-tuned checkpoint: {path}")
        elif args.command == "evaluate":
            _evaluate(pipe, args)
        elif args.command == "baseline":
            report = pipe.run_baseline(args.method)
            print(
                f"{report.method}: acc {report.pruned_acc:.4f} "
                f"(Δ {report.delta_acc:+.4f}), params PR "
                f"{report.params_pr * 100:.2f}%, FLOPs PR {report.flops_pr * 100:.2f}%"
            )
        elif args.command == "report":
            for path in pipe.emit_reports():
                print(f"wrote {path}")
        elif args.command == "run":
            result = pipe.run()
            print(f"pipeline complete; artifacts in {result['out']}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FcosError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _evaluate(pipe: Pipeline, args) -> None:
    from .checkpoint import load_checkpoint

    if args.model is not None:
        model = load_checkpoint(args.model)
    else:
        stages = pipe.state["stages"]
        entry = stages.get("lacd") or stages.get("train")
        if entry is None:
            raise ConfigError("no checkpoint available; pass --model or run stages first")
        model = load_checkpoint(pipe.out / entry["file"])
    acc, per_snr = evaluate_model(model, pipe.ensure_dataset(), "test")
    print(f"test accuracy: {acc:.4f}")
    for snr in sorted(per_snr):
        print(f"  {snr:+6.1f} dB: {per_snr[snr]:.4f}")


if __name__ == "__main__":
    raise SystemExit(main())
