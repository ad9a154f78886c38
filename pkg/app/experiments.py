import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import psutil
from pydantic import BaseModel, ConfigDict, ValidationError

from .config import (
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SWEEP_NAME,
    DEFAULT_TRACE_NAME,
    DEFAULT_VERDICT_NAME,
    Rational,
    ensure_parent_dir,
    get_worker_count,
)
from .geometry import GeometryError, Point, make_point
from .matrix_oracle import MatrixError
from .optimizer import CostFunction, optimize_run
from .protocol import Config, ProtocolError
from .scenarios import DEFAULT_GRID, preset_inputs, random_fault_plan, random_inputs
from .simulator import FaultPlan, SchedulerKind, SchedulerPolicy, SimTrace, SimulationError, TraceError, run
from .stable_vector import StableVectorError
from .verifier import verify_trace

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_USAGE = 2

SWEEP_COLUMNS = [
    "seed", "n", "f", "d", "mode", "epsilon", "t_end", "faulty", "crashed",
    "passed", "failed_checks", "max_hausdorff", "I_Z_measure",
]
TIMING_COLUMNS = ["runtime_s", "rss_mb"]

# Bad input: the experiment itself is malformed
USAGE_ERRORS = (ValidationError, ValueError, GeometryError, TraceError, OSError)
# The run broke a protocol guarantee on the way
RUN_ERRORS = (SimulationError, ProtocolError, StableVectorError)


class InputSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: Literal["explicit", "random", "preset"] = "random"
    values: Dict[int, List[Rational]] = {}  # --inputs (explicit)
    preset: Optional[str] = None  # --preset (identical, corners, majority)
    grid: int = DEFAULT_GRID  # random coordinates are multiples of (U - mu) / grid
    x_star: Optional[List[Rational]] = None  # shared point for identical/majority


class ExperimentSpec(BaseModel):
    config: Config
    inputs: InputSpec = InputSpec()
    plan: FaultPlan = FaultPlan()  # fixed faults for every seed
    random_faults: bool = False  # --random-faults: draw a fault plan per seed instead
    policy: SchedulerPolicy = SchedulerPolicy()  # seed is replaced per run
    seeds: List[int] = [0]  # --seeds
    output_dir: Path = DEFAULT_OUTPUT_DIR  # --output-dir
    compress: bool = False  # --gzip


def load_spec(path: str | Path) -> ExperimentSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return ExperimentSpec.model_validate_json(fh.read())


def realize(spec: ExperimentSpec, seed: int) -> tuple[dict[int, Point], FaultPlan, SchedulerPolicy]:
    """Inputs, fault plan and scheduler for one seed; everything derives from `seed`"""
    cfg = spec.config
    rng = np.random.default_rng(seed)
    source = spec.inputs
    x_star = make_point(source.x_star) if source.x_star is not None else None

    if source.kind == "explicit":
        inputs = {p: make_point(x) for p, x in source.values.items()}
    elif source.kind == "preset":
        if source.preset is None:
            raise ValueError("preset inputs need a preset name")
        inputs = preset_inputs(source.preset, cfg, rng, x_star)
    else:
        inputs = random_inputs(cfg, rng, source.grid)

    plan = random_fault_plan(cfg, rng) if spec.random_faults else spec.plan

    update: Dict[str, Any] = {"seed": seed}
    if spec.policy.kind == SchedulerKind.SLOW_SET and not spec.policy.slow_set:
        update["slow_set"] = list(range(cfg.n - cfg.f, cfg.n))
    policy = spec.policy.model_copy(update=update)
    return inputs, plan, policy


def run_seed(spec: ExperimentSpec, seed: int) -> SimTrace:
    inputs, plan, policy = realize(spec, seed)
    return run(spec.config, inputs, plan, policy)


def handle_run(spec: ExperimentSpec, seed: Optional[int] = None) -> Dict[str, Any]:
    """Run one seed, write its trace and verdict, and verify it"""
    seed = spec.seeds[0] if seed is None else seed
    trace_name = DEFAULT_TRACE_NAME + (".gz" if spec.compress else "")
    trace_path = ensure_parent_dir(spec.output_dir / trace_name)
    verdict_path = spec.output_dir / DEFAULT_VERDICT_NAME

    try:
        trace = run_seed(spec, seed)
        trace.to_jsonl(trace_path)
        verdict = verify_trace(trace)
        verdict.write(verdict_path)
    except RUN_ERRORS as e:
        logger.error(f"❌ Run with seed {seed} broke: {e}")
        return {"success": False, "message": f"Run failed: {e}", "exit_code": EXIT_PROPERTY_FAILURE}
    except USAGE_ERRORS as e:
        logger.error(f"❌ Invalid experiment: {e}")
        return {"success": False, "message": f"Invalid experiment: {e}", "exit_code": EXIT_USAGE}

    return {
        "success": verdict.passed,
        "message": "All checks passed" if verdict.passed else f"Failed checks: {verdict.failed_checks()}",
        "exit_code": verdict.exit_code,
        "seed": seed,
        "trace_path": str(trace_path),
        "verdict_path": str(verdict_path),
        "summary": verdict.summary,
    }


def sweep_row(spec_json: str, seed: int, timing: bool = False) -> Dict[str, Any]:
    """One CSV row; runs in a worker process, so the spec travels as JSON"""
    spec = ExperimentSpec.model_validate_json(spec_json)
    started = time.perf_counter()
    trace = run_seed(spec, seed)
    verdict = verify_trace(trace)
    summary = verdict.summary

    row = {
        "seed": seed,
        "n": summary["n"],
        "f": summary["f"],
        "d": summary["d"],
        "mode": summary["mode"],
        "epsilon": summary["epsilon"],
        "t_end": summary["t_end"],
        "faulty": " ".join(map(str, summary["faulty"])),
        "crashed": " ".join(map(str, summary["crashed"])),
        "passed": verdict.passed,
        "failed_checks": " ".join(verdict.failed_checks()),
        "max_hausdorff": summary["max_hausdorff"],
        "I_Z_measure": summary["I_Z_measure"],
    }
    if timing:
        row["runtime_s"] = f"{time.perf_counter() - started:.3f}"
        row["rss_mb"] = f"{psutil.Process().memory_info().rss / 2 ** 20:.1f}"
    return row


def handle_sweep(
    spec: ExperimentSpec,
    seeds: Optional[List[int]] = None,
    output: Optional[Path] = None,
    workers: Optional[int] = None,
    timing: bool = False,
) -> Dict[str, Any]:
    """Run every seed and write one CSV row per seed, ordered by seed"""
    seeds = sorted(spec.seeds if seeds is None else seeds)
    output = ensure_parent_dir(output or spec.output_dir / DEFAULT_SWEEP_NAME)
    workers = workers or get_worker_count()
    spec_json = spec.model_dump_json()

    logger.info(f"🚀 Sweeping {len(seeds)} seeds on {workers} worker(s)")
    try:
        if workers == 1 or len(seeds) <= 1:
            rows = [sweep_row(spec_json, seed, timing) for seed in seeds]
        else:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                # map preserves submission order, so rows stay sorted by seed
                rows = list(executor.map(sweep_row, [spec_json] * len(seeds), seeds, [timing] * len(seeds)))
    except RUN_ERRORS as e:
        logger.error(f"❌ Sweep aborted: {e}")
        return {"success": False, "message": f"Sweep failed: {e}", "exit_code": EXIT_PROPERTY_FAILURE}
    except USAGE_ERRORS as e:
        logger.error(f"❌ Invalid experiment: {e}")
        return {"success": False, "message": f"Invalid experiment: {e}", "exit_code": EXIT_USAGE}

    columns = SWEEP_COLUMNS + (TIMING_COLUMNS if timing else [])
    with open(output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    failed = [row["seed"] for row in rows if not row["passed"]]
    if failed:
        logger.warning(f"⚠️ {len(failed)} of {len(rows)} seeds failed: {failed[:10]}")
    else:
        logger.info(f"✅ All {len(rows)} seeds passed")
    return {
        "success": not failed,
        "message": f"{len(rows) - len(failed)}/{len(rows)} seeds passed",
        "exit_code": EXIT_PROPERTY_FAILURE if failed else EXIT_PASS,
        "sweep_path": str(output),
        "failed_seeds": failed,
    }


def handle_verify(trace_path: str | Path, verdict_path: Optional[str | Path] = None) -> Dict[str, Any]:
    try:
        trace = SimTrace.from_jsonl(trace_path)
        verdict = verify_trace(trace)
    except (TraceError, GeometryError, MatrixError, StableVectorError, ValidationError, KeyError) as e:
        logger.error(f"❌ Malformed trace {trace_path}: {e}")
        return {"success": False, "message": f"Malformed trace: {e}", "exit_code": EXIT_USAGE}

    if verdict_path is not None:
        verdict.write(verdict_path)
    return {
        "success": verdict.passed,
        "message": "All checks passed" if verdict.passed else f"Failed checks: {verdict.failed_checks()}",
        "exit_code": verdict.exit_code,
        "verdict": verdict.to_dict(),
    }


def handle_optimize(
    trace_path: str | Path,
    cost: CostFunction | Dict[str, Any] | str | Path,
    output: Optional[str | Path] = None,
) -> Dict[str, Any]:
    try:
        if isinstance(cost, (str, Path)):
            with open(cost, "r", encoding="utf-8") as fh:
                cost = CostFunction.model_validate_json(fh.read())
        elif isinstance(cost, dict):
            cost = CostFunction.model_validate(cost)
        trace = SimTrace.from_jsonl(trace_path)
        result = optimize_run(trace, cost)
    except (TraceError, GeometryError, ValidationError, ValueError, KeyError, OSError) as e:
        logger.error(f"❌ Cannot optimize over {trace_path}: {e}")
        return {"success": False, "message": f"Invalid input: {e}", "exit_code": EXIT_USAGE}

    payload = result.to_dict()
    if output is not None:
        path = ensure_parent_dir(output)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        logger.info(f"📝 Optimization result written to {path}")

    passed = result.report.passed
    return {
        "success": passed,
        "message": "Optimization checks passed" if passed else f"Violations: {result.report.violations[:3]}",
        "exit_code": EXIT_PASS if passed else EXIT_PROPERTY_FAILURE,
        "result": payload,
    }
