import os
import logging
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Annotated, Any

import psutil
from pydantic import BeforeValidator, PlainSerializer

logger = logging.getLogger(__name__)

# Default location for traces, verdicts and sweep CSVs (shared between commands)
DEFAULT_OUTPUT_DIR = Path("outputs/cclab")
DEFAULT_TRACE_NAME = "trace.jsonl"
DEFAULT_VERDICT_NAME = "verdict.json"
DEFAULT_SWEEP_NAME = "sweep.csv"

# Worker count for sweeps; everything else comes from the spec file or flags
WORKERS_ENV_VAR = "CCLAB_WORKERS"


def to_fraction(value: Any) -> Fraction:
    """Parse a rational from "p/q", a decimal string, an int, a float or a Decimal"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # shortest repr, so 0.01 becomes 1/100 rather than its binary expansion
        return Fraction(repr(value))
    if isinstance(value, Decimal):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"not a rational number: {value!r}") from e
    raise ValueError(f"cannot interpret {type(value).__name__} as a rational")


def format_fraction(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


# pydantic field type for exact rationals; models using it need arbitrary_types_allowed
Rational = Annotated[
    Fraction,
    BeforeValidator(to_fraction),
    PlainSerializer(format_fraction, return_type=str),
]


def get_worker_count() -> int:
    """Worker count for sweeps, from CCLAB_WORKERS or the number of physical cores"""
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw:
        try:
            workers = int(raw)
        except ValueError:
            logger.warning(f"⚠️ Ignoring invalid {WORKERS_ENV_VAR}={raw!r}")
        else:
            if workers >= 1:
                return workers
            logger.warning(f"⚠️ {WORKERS_ENV_VAR} must be at least 1, got {workers}")

    cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return max(1, cores)


def ensure_parent_dir(path: str | os.PathLike) -> Path:
    """Create the parent directory of an output file if it doesn't exist"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
