"""
Input generators, adversarial presets and random fault plans.

All randomness goes through numpy Generators so a seed pins a scenario.
"""

import logging
from fractions import Fraction
from typing import Optional

import numpy as np

from .geometry import Point
from .protocol import Config, Mode, compute_t_end
from .simulator import CrashPoint, FaultPlan, SchedulerKind, SchedulerPolicy

logger = logging.getLogger(__name__)

PRESETS = ("identical", "corners", "majority")

# Random coordinates are multiples of (U - mu) / DEFAULT_GRID
DEFAULT_GRID = 8


def as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _grid_point(cfg: Config, ks, grid: int) -> Point:
    span = cfg.U - cfg.mu
    return tuple(cfg.mu + span * Fraction(int(k), grid) for k in ks)


def random_inputs(
    cfg: Config,
    rng: np.random.Generator | int | None = None,
    grid: int = DEFAULT_GRID,
) -> dict[int, Point]:
    """Uniform rational inputs on a grid over [mu, U]^d"""
    if grid < 1:
        raise ValueError(f"grid must be positive, got {grid}")
    rng = as_rng(rng)
    draws = rng.integers(0, grid + 1, size=(cfg.n, cfg.d))
    return {p: _grid_point(cfg, draws[p], grid) for p in range(cfg.n)}


def _corner(cfg: Config, axis: Optional[int]) -> Point:
    if axis is None:
        return tuple(cfg.mu for _ in range(cfg.d))
    return tuple(cfg.U if j == axis else cfg.mu for j in range(cfg.d))


def corner_inputs(cfg: Config) -> dict[int, Point]:
    """
    Degenerate simplex-corner layout: f+1 processes at the mu corner, f at each
    axis corner mu + (U-mu)e_j, the rest at the U corner. With n = (d+2)f+1 and
    the last f processes slow, the safe area of the others is the mu corner alone.
    """
    f, d = cfg.f, cfg.d
    if cfg.n < (d + 1) * f + 1:
        raise ValueError(f"corners preset needs n >= {(d + 1) * f + 1}, got n={cfg.n}")

    top = tuple(cfg.U for _ in range(d))
    inputs = {p: _corner(cfg, None) for p in range(f + 1)}
    for j in range(1, d + 1):
        for k in range(1, f + 1):
            inputs[j * f + k] = _corner(cfg, j - 1)
    for p in range((d + 1) * f + 1, cfg.n):
        inputs[p] = top
    return inputs


def majority_inputs(
    cfg: Config,
    x_star: Optional[Point] = None,
    rng: np.random.Generator | int | None = None,
) -> dict[int, Point]:
    """2f+1 processes share x_star; the others get random inputs"""
    rng = as_rng(rng)
    if x_star is None:
        x_star = _grid_point(cfg, [DEFAULT_GRID // 2] * cfg.d, DEFAULT_GRID)
    if not cfg.in_domain(x_star):
        raise ValueError(f"x* = {x_star} is outside [mu, U]^d")
    inputs = random_inputs(cfg, rng)
    for p in range(min(2 * cfg.f + 1, cfg.n)):
        inputs[p] = tuple(x_star)
    return inputs


def preset_inputs(
    name: str,
    cfg: Config,
    rng: np.random.Generator | int | None = None,
    x_star: Optional[Point] = None,
) -> dict[int, Point]:
    if name == "identical":
        point = x_star if x_star is not None else _grid_point(cfg, [DEFAULT_GRID // 2] * cfg.d, DEFAULT_GRID)
        return {p: tuple(point) for p in range(cfg.n)}
    if name == "corners":
        return corner_inputs(cfg)
    if name == "majority":
        return majority_inputs(cfg, x_star, rng)
    raise ValueError(f"unknown preset {name!r}; choose one of {PRESETS}")


def majority_value(inputs: dict[int, Point], f: int) -> Optional[Point]:
    """An input shared by at least 2f+1 processes, if any (smallest first)"""
    counts: dict[Point, int] = {}
    for x in inputs.values():
        counts[x] = counts.get(x, 0) + 1
    shared = sorted(x for x, c in counts.items() if c >= 2 * f + 1)
    return shared[0] if shared else None


def random_fault_plan(
    cfg: Config,
    rng: np.random.Generator | int | None = None,
    t_end: Optional[int] = None,
) -> FaultPlan:
    """Up to f faulty processes, each crashing somewhere and/or lying about its input"""
    rng = as_rng(rng)
    if t_end is None:
        t_end = compute_t_end(cfg)

    size = int(rng.integers(0, cfg.f + 1))
    faulty = sorted(int(p) for p in rng.choice(cfg.n, size=size, replace=False))
    incorrect: dict[int, list[Fraction]] = {}
    crashes: dict[int, CrashPoint] = {}

    for p in faulty:
        if cfg.mode == Mode.INCORRECT_INPUTS and rng.random() < 0.5:
            ks = rng.integers(0, DEFAULT_GRID + 1, size=cfg.d)
            incorrect[p] = list(_grid_point(cfg, ks, DEFAULT_GRID))

        roll = rng.random()
        if roll < 0.6:
            round_ = int(rng.integers(0, t_end + 1))
            limit = 1 if round_ == 0 else cfg.n - 1
            crashes[p] = CrashPoint(round=round_, after_sends=int(rng.integers(0, limit + 1)))
        elif roll < 0.8:
            crashes[p] = CrashPoint(at_event=int(rng.integers(0, 4 * cfg.n * cfg.n * (t_end + 1))))
        # otherwise the process is faulty but never crashes

    plan = FaultPlan(faulty=faulty, incorrect_inputs=incorrect, crash_points=crashes)
    logger.debug(f"Random fault plan: {plan.model_dump(mode='json')}")
    return plan


def slow_set_policy(cfg: Config, seed: int = 0) -> SchedulerPolicy:
    """Withhold the last f processes until every other live process decides"""
    return SchedulerPolicy(
        kind=SchedulerKind.SLOW_SET,
        seed=seed,
        slow_set=list(range(cfg.n - cfg.f, cfg.n)),
    )
