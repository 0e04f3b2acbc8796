"""Command-line entry point: ``scanplan plan|verify|synth``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import cloudio, synthetic
from .errors import ScanPlanError
from .pipeline import EXIT_ERROR, EXIT_OK, EXIT_WARNING, StageError, load_config, run_pipeline, verify_plan


def _pairs(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scanplan", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan an inspection path for a workpiece")
    p.add_argument("input")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=["ply", "xyz", "stl"], help="input format (default: suffix)")
    p.add_argument("--plan-format", choices=["json", "csv"])
    p.add_argument("--report-only", action="store_true", help="write report.json only")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    v = sub.add_parser("verify", help="re-run coverage for an existing plan")
    v.add_argument("plan")
    v.add_argument("cloud")
    v.add_argument("--format", choices=["ply", "xyz", "stl"])
    v.add_argument("--floor", type=float, default=0.9)
    v.add_argument("--seed", type=int, default=0, help="sampling seed for STL clouds")

    s = sub.add_parser("synth", help="write a synthetic test workpiece")
    s.add_argument("shape", choices=["box", "plate", "dome"])
    s.add_argument("output")
    s.add_argument("--count", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    return ap


def _cmd_plan(args) -> int:
    overrides = _pairs(args.set)
    overrides["input"] = args.input
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out:
        overrides["out_dir"] = args.out
    if args.format:
        overrides["input_format"] = args.format
    if args.plan_format:
        overrides["plan_format"] = args.plan_format
    cfg = load_config(args.config, overrides)
    result = run_pipeline(cfg, report_only=args.report_only)
    print(json.dumps(result.report.to_dict(), indent=2, sort_keys=True))
    for w in result.report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return result.exit_code


def _cmd_verify(args) -> int:
    report = verify_plan(args.plan, args.cloud, args.format, seed=args.seed)
    print(json.dumps({"coverage_rate": report.rate, "uncovered": int(len(report.uncovered))}))
    return EXIT_OK if report.rate >= args.floor else EXIT_WARNING


def _cmd_synth(args) -> int:
    if args.shape == "box":
        cloudio.save_stl(synthetic.open_box_mesh(), args.output)
    elif args.shape == "plate":
        cloudio.save_cloud(synthetic.plate(count=args.count, seed=args.seed), args.output)
    else:
        cloud, _ = synthetic.plane_with_dome(count=args.count, seed=args.seed)
        cloudio.save_cloud(cloud, args.output)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"plan": _cmd_plan, "verify": _cmd_verify, "synth": _cmd_synth}
    try:
        return handlers[args.command](args)
    except StageError as exc:
        print(f"error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_ERROR
    except (ScanPlanError, OSError, ValueError) as exc:
        stage = getattr(exc, "stage", "scanplan")
        print(f"error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
