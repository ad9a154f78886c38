"""
Command-line entry point for cclab
Runs, sweeps, verifies and optimizes convex consensus executions
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError

from app.experiments import (
    EXIT_USAGE,
    ExperimentSpec,
    handle_optimize,
    handle_run,
    handle_sweep,
    handle_verify,
)
from app.scenarios import PRESETS
from app.simulator import SchedulerKind

logger = logging.getLogger(__name__)


def parse_seeds(raw: str) -> list[int]:
    """Seeds from "7", "0:100" (half-open range) or "1,5,9" """
    if ":" in raw:
        start, stop = raw.split(":", 1)
        return list(range(int(start), int(stop)))
    if not raw.strip():
        return []
    return [int(s) for s in raw.split(",")]


def add_experiment_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("spec", nargs="?", help="experiment spec JSON; flags override its fields")
    parser.add_argument("--n", type=int)
    parser.add_argument("--f", type=int)
    parser.add_argument("--d", type=int)
    parser.add_argument("--epsilon", help='rational, e.g. "1/10" or 0.01')
    parser.add_argument("--mu")
    parser.add_argument("--U")
    parser.add_argument("--mode", choices=["incorrect-inputs", "correct-inputs"])
    parser.add_argument("--inputs", help='explicit inputs as JSON, e.g. {"0": ["0"], "1": ["1/2"]}')
    parser.add_argument("--preset", choices=PRESETS)
    parser.add_argument("--scheduler", choices=[k.value for k in SchedulerKind])
    parser.add_argument("--slow-set", help="comma-separated slow process ids")
    parser.add_argument("--random-faults", action="store_true", default=None)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--seeds", help='"0:1000", "1,2,3" or a single seed')
    parser.add_argument("--output-dir", type=Path)
    parser.add_argument("--gzip", action="store_true", default=None)


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Spec file (if any) with command-line overrides applied on top"""
    data: Dict[str, Any] = {}
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            data = json.load(fh)

    config = dict(data.get("config", {}))
    for key in ("n", "f", "d", "epsilon", "mu", "U", "mode"):
        value = getattr(args, key)
        if value is not None:
            config[key] = value
    data["config"] = config

    inputs = dict(data.get("inputs", {}))
    if args.inputs:
        inputs = {"kind": "explicit", "values": json.loads(args.inputs)}
    elif args.preset:
        inputs.update(kind="preset", preset=args.preset)
    data["inputs"] = inputs

    policy = dict(data.get("policy", {}))
    if args.scheduler:
        policy["kind"] = args.scheduler
    if args.slow_set:
        policy["slow_set"] = [int(p) for p in args.slow_set.split(",")]
    data["policy"] = policy

    if args.seeds is not None:
        data["seeds"] = parse_seeds(args.seeds)
    if args.seed is not None:
        data["seeds"] = [args.seed]
    if args.random_faults:
        data["random_faults"] = True
    if args.output_dir is not None:
        data["output_dir"] = str(args.output_dir)
    if args.gzip:
        data["compress"] = True

    return ExperimentSpec.model_validate(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cclab", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="simulate one seed, write its trace and verdict")
    add_experiment_args(run_parser)

    sweep_parser = sub.add_parser("sweep", help="simulate many seeds into one CSV")
    add_experiment_args(sweep_parser)
    sweep_parser.add_argument("--output", type=Path, help="CSV path")
    sweep_parser.add_argument("--workers", type=int)
    sweep_parser.add_argument("--timing", action="store_true", help="add runtime and memory columns")

    verify_parser = sub.add_parser("verify", help="check a recorded trace")
    verify_parser.add_argument("trace", type=Path)
    verify_parser.add_argument("--output", type=Path, help="verdict JSON path")

    optimize_parser = sub.add_parser("optimize", help="minimize a cost over each decision of a trace")
    optimize_parser.add_argument("trace", type=Path)
    optimize_parser.add_argument("cost", type=Path, help="cost function JSON")
    optimize_parser.add_argument("--output", type=Path)

    return parser


def dispatch(args: argparse.Namespace) -> Dict[str, Any]:
    if args.command == "verify":
        return handle_verify(args.trace, args.output)
    if args.command == "optimize":
        return handle_optimize(args.trace, args.cost, args.output)

    try:
        spec = build_spec(args)
    except (ValidationError, ValueError, OSError) as e:
        logger.error(f"❌ Invalid experiment spec: {e}")
        return {"success": False, "message": str(e), "exit_code": EXIT_USAGE}

    if args.command == "run":
        return handle_run(spec)
    return handle_sweep(spec, output=args.output, workers=args.workers, timing=args.timing)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    result = dispatch(args)
    logger.info(f"{'✅' if result['success'] else '❌'} {result['message']}")
    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
