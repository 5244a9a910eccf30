"""Command-line entry point.

Thin client over the handlers in ``runs``: it parses flags, loads/overrides
the RunConfig, dispatches, and maps errors onto stable exit codes:

    0 success, 2 config error, 3 missing input, 4 numeric failure.

REPRO_STRICT=1 forces workers=1 for bit-identical reruns.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from pydantic import ValidationError

from .config import RunConfig, load_config
from .errors import ConfigError, MissingInputError, NumericError
from . import runs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=False, help="RunConfig JSON file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--workers", type=int, default=None, help="override workers")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=None, help="override epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memtopo",
        description="Simulated crossbar experiments: forming, topology "
                    "training, weight-tuning baselines, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("form", help="form banks, export conductance CSVs")
    _add_common(p)

    p = sub.add_parser("train-to", help="edge-pruning topology training")
    _add_common(p)

    p = sub.add_parser("train-wo", help="weight-optimization baseline")
    _add_common(p)
    p.add_argument("--mode", choices=["free", "budget-matched"], default="free")
    p.add_argument("--budget", type=int, default=None,
                   help="programming-op budget for budget-matched mode")

    p = sub.add_parser("eval", help="test-set inference on a trained snapshot")
    _add_common(p)
    p.add_argument("--run-dir", required=True, help="directory with snapshot.npz")

    p = sub.add_parser("export-dist", help="weight histograms before/after pruning")
    _add_common(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--bins", type=int, default=101)

    p = sub.add_parser("report", help="aggregate finished run directories")
    _add_common(p)
    p.add_argument("run_dirs", nargs="+")

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    if args.workers is not None:
        updates["workers"] = args.workers
    if getattr(args, "budget", None) is not None:
        updates["to_budget"] = args.budget
    if updates:
        cfg = cfg.model_copy(update=updates)
    if os.environ.get("REPRO_STRICT") == "1":
        cfg = cfg.model_copy(update={"workers": 1})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            import uvicorn

            from .service import app

            uvicorn.run(app, host=args.host, port=args.port)
            return EXIT_OK
        cfg = _load(args)
        if args.command == "form":
            summary = runs.run_form(cfg, args.out)
        elif args.command == "train-to":
            summary = runs.run_train_to(cfg, args.out)
        elif args.command == "train-wo":
            summary = runs.run_train_wo(cfg, args.out,
                                        args.mode.replace("-", "_"))
        elif args.command == "eval":
            summary = runs.run_eval(cfg, args.run_dir, args.out,
                                    workers=cfg.workers)
        elif args.command == "export-dist":
            summary = runs.run_export_dist(cfg, args.run_dir, args.out,
                                           bins=args.bins)
        elif args.command == "report":
            summary = runs.run_report(args.run_dirs, args.out, cfg)
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
