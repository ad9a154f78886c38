"""
Convex cost minimization over decided polytopes.

Each fault-free process minimizes a convex cost over its own decision. All
three cost kinds are minimized exactly by enumerating a finite candidate set
that is guaranteed to contain the lexicographically smallest minimizer, so the
solver tolerance is zero.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from itertools import combinations
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .config import Rational, format_fraction
from .geometry import (
    ConvexPolytope,
    EmptyPolytopeError,
    Point,
    contains_point,
    point_to_json,
    sqrt_rational,
    squared_euclidean,
    squared_norm,
)
from .protocol import Config
from .reports import CheckReport
from .scenarios import majority_value
from .simulator import SimTrace

logger = logging.getLogger(__name__)


class CostKind(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    MAX_AFFINE = "max-affine"


class AffinePiece(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    slope: list[Rational]
    intercept: Rational = Fraction(0)


class CostFunction(BaseModel):
    """
    linear:     coeffs·x + offset
    quadratic:  (x - center)^T weights (x - center) + offset, weights symmetric PSD
    max-affine: max over pieces of slope·x + intercept
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: CostKind
    coeffs: list[Rational] = []
    offset: Rational = Fraction(0)
    center: list[Rational] = []
    weights: list[list[Rational]] = []
    pieces: list[AffinePiece] = []
    B: Optional[Rational] = None

    @model_validator(mode="after")
    def check_shape(self):
        if self.kind == CostKind.LINEAR:
            if not self.coeffs:
                raise ValueError("linear cost needs coeffs")
        elif self.kind == CostKind.QUADRATIC:
            d = len(self.center)
            if d == 0:
                raise ValueError("quadratic cost needs a center")
            if not self.weights:
                self.weights = [[Fraction(int(i == j)) for j in range(d)] for i in range(d)]
            q = self.weights
            if len(q) != d or any(len(row) != d for row in q):
                raise ValueError(f"weights must be {d}x{d}")
            if any(q[i][j] != q[j][i] for i in range(d) for j in range(d)):
                raise ValueError("weights must be symmetric")
            if not _is_psd(q):
                raise ValueError("weights must be positive semidefinite")
        elif self.kind == CostKind.MAX_AFFINE:
            if not self.pieces:
                raise ValueError("max-affine cost needs at least one piece")
            if len({len(p.slope) for p in self.pieces}) != 1:
                raise ValueError("all pieces must have the same dimension")
        if self.B is not None and self.B < 0:
            raise ValueError(f"Lipschitz constant must be non-negative, got {self.B}")
        return self

    @property
    def dimension(self) -> int:
        if self.kind == CostKind.LINEAR:
            return len(self.coeffs)
        if self.kind == CostKind.QUADRATIC:
            return len(self.center)
        return len(self.pieces[0].slope)

    def evaluate(self, x: Point) -> Fraction:
        if len(x) != self.dimension:
            raise ValueError(f"cost over d={self.dimension} evaluated at {len(x)}-dim point")
        if self.kind == CostKind.LINEAR:
            return _dot(self.coeffs, x) + self.offset
        if self.kind == CostKind.QUADRATIC:
            diff = [a - c for a, c in zip(x, self.center)]
            return _quad_form(self.weights, diff) + self.offset
        return max(_dot(p.slope, x) + p.intercept for p in self.pieces)


def _dot(a, b) -> Fraction:
    return sum((Fraction(x) * y for x, y in zip(a, b)), Fraction(0))


def _quad_form(q, u) -> Fraction:
    return sum((q[i][j] * u[i] * u[j] for i in range(len(u)) for j in range(len(u))), Fraction(0))


def _is_psd(q) -> bool:
    if len(q) == 1:
        return q[0][0] >= 0
    det = q[0][0] * q[1][1] - q[0][1] * q[1][0]
    return q[0][0] >= 0 and q[1][1] >= 0 and det >= 0


def _solve2(a11, a12, a21, a22, b1, b2) -> Optional[Point]:
    det = a11 * a22 - a12 * a21
    if det == 0:
        return None
    return ((b1 * a22 - a12 * b2) / det, (a11 * b2 - b1 * a21) / det)


def _edges(h: ConvexPolytope) -> list[tuple[Point, Point]]:
    ring = h.ring
    if len(ring) < 2:
        return []
    if len(ring) == 2:
        return [(ring[0], ring[1])]
    return list(zip(ring, ring[1:] + ring[:1]))


def _on_edge(a: Point, b: Point, s: Fraction) -> Point:
    return tuple(x + s * (y - x) for x, y in zip(a, b))


def _quadratic_candidates(cost: CostFunction, h: ConvexPolytope) -> list[Point]:
    q, c = cost.weights, cost.center
    candidates = list(h.vertices)

    # unconstrained minimizer, unique when weights are non-singular
    if cost.dimension == 1:
        if q[0][0] != 0:
            candidates.append((c[0],))
    elif q[0][0] * q[1][1] - q[0][1] * q[1][0] != 0:
        candidates.append(tuple(c))

    for a, b in _edges(h):
        u = [y - x for x, y in zip(a, b)]
        curvature = _quad_form(q, u)
        if curvature == 0:
            continue
        diff = [x - ci for x, ci in zip(a, c)]
        slope = sum((q[i][j] * u[i] * diff[j] for i in range(len(u)) for j in range(len(u))), Fraction(0))
        s = -slope / curvature
        if 0 < s < 1:
            candidates.append(_on_edge(a, b, s))

    return [p for p in candidates if contains_point(h, p)]


def _max_affine_candidates(cost: CostFunction, h: ConvexPolytope) -> list[Point]:
    pieces = cost.pieces
    candidates = list(h.vertices)

    if cost.dimension == 1:
        for p, r in combinations(pieces, 2):
            ds = p.slope[0] - r.slope[0]
            if ds != 0:
                candidates.append(((r.intercept - p.intercept) / ds,))
        return [x for x in candidates if contains_point(h, x)]

    for p, r in combinations(pieces, 2):
        ds = [x - y for x, y in zip(p.slope, r.slope)]
        db = p.intercept - r.intercept
        for a, b in _edges(h):
            u = [y - x for x, y in zip(a, b)]
            denom = _dot(ds, u)
            if denom == 0:
                continue
            s = -(_dot(ds, a) + db) / denom
            if 0 < s < 1:
                candidates.append(_on_edge(a, b, s))

    for p, r, w in combinations(pieces, 3):
        d1 = [x - y for x, y in zip(p.slope, r.slope)]
        d2 = [x - y for x, y in zip(p.slope, w.slope)]
        point = _solve2(d1[0], d1[1], d2[0], d2[1], r.intercept - p.intercept, w.intercept - p.intercept)
        if point is not None:
            candidates.append(point)

    return [x for x in candidates if contains_point(h, x)]


def minimize_over_polytope(cost: CostFunction, h: ConvexPolytope) -> tuple[Point, Fraction]:
    """Exact minimum of a convex cost over h; ties go to the lexicographically smallest point"""
    if h.is_empty:
        raise EmptyPolytopeError("cannot minimize over an empty polytope")
    if cost.dimension != h.d:
        raise ValueError(f"cost over d={cost.dimension} but polytope has d={h.d}")

    if cost.kind == CostKind.LINEAR:
        candidates = list(h.vertices)
    elif cost.kind == CostKind.QUADRATIC:
        candidates = _quadratic_candidates(cost, h)
    else:
        candidates = _max_affine_candidates(cost, h)

    best = min(candidates, key=lambda p: (cost.evaluate(p), p))
    return best, cost.evaluate(best)


def upper_sqrt(value: Fraction) -> Fraction:
    """A rational r >= sqrt(value), within 1e-30 of it"""
    r = Fraction(str(sqrt_rational(Fraction(value))))
    step = Fraction(1, 10 ** 30)
    while r * r < value:
        r += step
    return r


def lipschitz_bound(cost: CostFunction, cfg: Config) -> Fraction:
    """B with |c(x) - c(y)| <= B |x - y| on [mu, U]^d; the cost's own B wins when given"""
    if cost.B is not None:
        return cost.B
    if cost.kind == CostKind.LINEAR:
        return upper_sqrt(squared_norm(tuple(cost.coeffs)))
    if cost.kind == CostKind.MAX_AFFINE:
        return max(upper_sqrt(squared_norm(tuple(p.slope))) for p in cost.pieces)

    # |grad| = |2Q(x - c)| <= 2 |Q|_F max_x |x - c|, the max attained at a corner of the box
    frobenius_sq = sum((x * x for row in cost.weights for x in row), Fraction(0))
    reach_sq = sum(
        (max((cfg.mu - c) ** 2, (cfg.U - c) ** 2) for c in cost.center),
        Fraction(0),
    )
    return 2 * upper_sqrt(frobenius_sq) * upper_sqrt(reach_sq)


def check_lipschitz(cost: CostFunction, cfg: Config, samples: int = 200, seed: int = 0) -> CheckReport:
    """Spot-check B on random grid point pairs of the domain, exactly (squared)"""
    report = CheckReport(name="lipschitz")
    B = lipschitz_bound(cost, cfg)
    rng = np.random.default_rng(seed)
    grid = 64
    span = cfg.U - cfg.mu
    draws = rng.integers(0, grid + 1, size=(samples, 2, cfg.d))
    for pair in draws:
        x, y = (tuple(cfg.mu + span * Fraction(int(k), grid) for k in point) for point in pair)
        gap = cost.evaluate(x) - cost.evaluate(y)
        report.expect(gap * gap <= B * B * squared_euclidean(x, y), f"|c({x}) - c({y})| exceeds B |x - y|")
    report.details = {"B": format_fraction(B), "samples": samples}
    return report


@dataclass
class OptResult:
    minimizers: dict[int, Point]
    values: dict[int, Fraction]
    B: Fraction
    delta_opt: Fraction = Fraction(0)
    report: CheckReport = field(default_factory=lambda: CheckReport(name="optimization"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "B": format_fraction(self.B),
            "delta_opt": format_fraction(self.delta_opt),
            "processes": {
                str(p): {"y": point_to_json(y), "value": format_fraction(self.values[p])}
                for p, y in sorted(self.minimizers.items())
            },
            "report": self.report.to_dict(),
        }


def optimize_run(trace: SimTrace, cost: CostFunction, delta_opt: Fraction = Fraction(0)) -> OptResult:
    cfg = trace.config
    B = lipschitz_bound(cost, cfg)
    report = CheckReport(name="optimization")
    minimizers: dict[int, Point] = {}
    values: dict[int, Fraction] = {}

    for p in trace.fault_free:
        h = trace.decisions[p]
        y, value = minimize_over_polytope(cost, h)
        report.expect(contains_point(h, y), f"y_{p} = {y} is outside its decision")
        minimizers[p], values[p] = y, value

    bound = cfg.epsilon * B + 2 * delta_opt
    for a, b in combinations(sorted(values), 2):
        report.expect(
            abs(values[a] - values[b]) <= bound,
            f"|c(y_{a}) - c(y_{b})| = {abs(values[a] - values[b])} exceeds eps*B + 2*delta = {bound}",
        )

    x_star = majority_value(trace.effective_inputs, cfg.f)
    if x_star is not None:
        target = cost.evaluate(x_star)
        for p, value in values.items():
            report.expect(
                value <= target + delta_opt,
                f"c(y_{p}) = {value} exceeds c(x*) = {target} with 2f+1 processes at x*",
            )

    # reported only: point agreement between minimizers is not guaranteed
    max_gap = max(
        (squared_euclidean(minimizers[a], minimizers[b]) for a, b in combinations(sorted(minimizers), 2)),
        default=Fraction(0),
    )
    spread = max(values.values()) - min(values.values()) if values else Fraction(0)
    report.details = {
        "value_bound": format_fraction(bound),
        "max_value_spread": format_fraction(spread),
        "max_minimizer_distance": str(sqrt_rational(max_gap)),
        "x_star": point_to_json(x_star) if x_star is not None else None,
    }
    logger.info(
        f"🎯 Optimized over {len(values)} decisions: value spread {format_fraction(spread)}, "
        f"max minimizer distance {sqrt_rational(max_gap)}"
    )
    return OptResult(minimizers=minimizers, values=values, B=B, delta_opt=delta_opt, report=report)
