"""Command-line entry point.

One subcommand per pipeline stage plus `run` for the whole flow. All
subcommands share the flags --config, --seed (override), --out, --mode and
--resume. Exit codes: 0 ok, 1 stage failure, 2 usage or schema errors; on
failure a machine-readable error JSON lands on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DelaywatchError, SchemaError, SingleClass, StageFailure
from .pipeline import (
    RunContext,
    read_json,
    run_experiment,
    run_stage,
    validate_config,
    write_json,
)

SUBCOMMANDS = ["run", "gen", "sta", "fab", "cfst", "bin", "trainset", "train",
               "sweep", "detect", "roc", "report"]


def _error_json(exc: BaseException) -> str:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, StageFailure):
        doc["stage"] = exc.stage
    if isinstance(exc, SchemaError):
        doc["field"] = exc.field
    return json.dumps(doc, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delaywatch",
        description="Golden-IC-free delay side-channel Trojan screening "
                    "on virtual silicon.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the '{name}' stage" if name != "run"
                           else "run the full pipeline")
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--mode", choices=["ssta", "sgtm", "ngtm"], default=None,
                       help="restrict detection stages to one mode")
        p.add_argument("--resume", action="store_true",
                       help="skip stages whose outputs are current")
    return parser


def _load_config(args) -> dict:
    try:
        doc = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise SchemaError("config", f"file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise SchemaError("config", f"invalid JSON: {exc}")
    if args.seed is not None:
        doc["seed"] = args.seed
    return doc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = _load_config(args)
        if args.command == "run":
            run_experiment(doc, args.out, resume=args.resume, only_mode=args.mode)
            return 0
        cfg = validate_config(doc)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(out, cfg)
        write_json(ctx.path("resolved_config.json"), cfg)
        run_stage(ctx, args.command, resume=args.resume, only_mode=args.mode)
        if args.command == "roc":
            modes = read_json(ctx.path("youden.json"))["modes"]
            entries = [e for per_bin in modes.values() for e in per_bin.values()]
            if entries and all(e.get("status") == "single_class" for e in entries):
                raise SingleClass("every detection result carries a single class")
        return 0
    except (SchemaError, SingleClass) as exc:
        sys.stderr.write(_error_json(exc) + "\n")
        return 2
    except DelaywatchError as exc:
        sys.stderr.write(_error_json(exc) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
