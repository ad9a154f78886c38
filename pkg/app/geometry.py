"""
Exact-arithmetic convex polytope calculus.

Polytopes are kept in vertex representation with rational coordinates and a
canonical form (minimal vertex set, lexicographically sorted), so two polytopes
are equal as sets exactly when their representations are equal. Dimensions 1
and 2 are supported; intersections go through interval endpoints (d=1) or
half-plane clipping (d=2).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from functools import cached_property
from typing import Any, Iterable, Iterator, Sequence

from .config import format_fraction, to_fraction

Rat = Fraction
Point = tuple[Fraction, ...]
PointMultiset = Sequence[Point]
HalfPlane = tuple[Point, Fraction]  # (a, b) meaning a·x <= b

SUPPORTED_DIMENSIONS = (1, 2)

# Only the final square root of a Hausdorff distance is approximated
DISTANCE_ERROR_BOUND = Decimal("1e-12")
_SQRT_PRECISION = 50


class GeometryError(ValueError):
    """Invalid geometric input"""


class DimensionMismatchError(GeometryError):
    pass


class EmptyPolytopeError(GeometryError):
    pass


def make_point(coords: Iterable[Any]) -> Point:
    return tuple(to_fraction(c) for c in coords)


def _check_dimension(d: int) -> None:
    if d not in SUPPORTED_DIMENSIONS:
        raise GeometryError(f"unsupported dimension d={d}; supported: {SUPPORTED_DIMENSIONS}")


def _dot(a: Point, b: Point) -> Fraction:
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


def _sub(a: Point, b: Point) -> Point:
    return tuple(x - y for x, y in zip(a, b))


def _cross(o: Point, a: Point, b: Point) -> Fraction:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def squared_norm(p: Point) -> Fraction:
    return _dot(p, p)


def squared_euclidean(p: Point, q: Point) -> Fraction:
    return squared_norm(_sub(p, q))


@dataclass(frozen=True)
class ConvexPolytope:
    """Canonical vertex-represented convex polytope; build it with convex_hull()"""

    d: int
    vertices: tuple[Point, ...] = ()

    @classmethod
    def empty(cls, d: int) -> "ConvexPolytope":
        _check_dimension(d)
        return cls(d, ())

    @property
    def is_empty(self) -> bool:
        return not self.vertices

    @cached_property
    def ring(self) -> tuple[Point, ...]:
        """Vertices in counter-clockwise order (d=2), or (lo, hi) for d=1"""
        if self.d == 2:
            return tuple(_monotone_chain(self.vertices))
        return self.vertices

    @property
    def lo(self) -> Fraction:
        return self.vertices[0][0]

    @property
    def hi(self) -> Fraction:
        return self.vertices[-1][0]

    def __repr__(self) -> str:
        coords = ", ".join(
            "(" + ", ".join(str(c) for c in v) + ")" for v in self.vertices
        )
        return f"ConvexPolytope(d={self.d}, [{coords}])"


def _monotone_chain(points: Sequence[Point]) -> list[Point]:
    # points must be sorted and unique; collinear points are dropped
    pts = list(points)
    if len(pts) <= 1:
        return pts

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)

    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)

    return lower[:-1] + upper[:-1]


def _infer_dimension(points: PointMultiset, d: int | None) -> int:
    if d is None:
        if not points:
            raise GeometryError("dimension is required for an empty multiset")
        d = len(points[0])
    _check_dimension(d)
    for p in points:
        if len(p) != d:
            raise DimensionMismatchError(f"point {p} does not have dimension {d}")
    return d


def convex_hull(points: PointMultiset, d: int | None = None) -> ConvexPolytope:
    """H(X) in canonical minimal form; H(∅) is the empty polytope"""
    points = list(points)
    d = _infer_dimension(points, d)
    if not points:
        return ConvexPolytope.empty(d)

    if d == 1:
        lo = min(p[0] for p in points)
        hi = max(p[0] for p in points)
        if lo == hi:
            return ConvexPolytope(1, ((lo,),))
        return ConvexPolytope(1, ((lo,), (hi,)))

    ring = _monotone_chain(sorted(set(points)))
    return ConvexPolytope(2, tuple(sorted(ring)))


def point_polytope(p: Point) -> ConvexPolytope:
    return convex_hull([p])


def _same_dimension(polytopes: Sequence[ConvexPolytope]) -> int:
    if not polytopes:
        raise GeometryError("at least one polytope is required")
    d = polytopes[0].d
    for h in polytopes:
        if h.d != d:
            raise DimensionMismatchError(f"mixed dimensions {d} and {h.d}")
    return d


def half_planes(h: ConvexPolytope) -> list[HalfPlane]:
    """Half-plane description of a non-empty planar polytope, including degenerate ones"""
    ring = h.ring
    one, zero = Fraction(1), Fraction(0)
    if len(ring) == 1:
        (x, y), = ring
        return [
            ((one, zero), x),
            ((-one, zero), -x),
            ((zero, one), y),
            ((zero, -one), -y),
        ]
    if len(ring) == 2:
        p, q = ring
        u = _sub(q, p)
        normal = (-u[1], u[0])
        neg_normal = (u[1], -u[0])
        neg_u = (-u[0], -u[1])
        return [
            (normal, _dot(normal, p)),
            (neg_normal, -_dot(normal, p)),
            (u, _dot(u, q)),
            (neg_u, -_dot(u, p)),
        ]

    planes = []
    for p, q in zip(ring, ring[1:] + ring[:1]):
        a = (q[1] - p[1], p[0] - q[0])
        planes.append((a, _dot(a, p)))
    return planes


def _clip(ring: Sequence[Point], a: Point, b: Fraction) -> list[Point]:
    # Sutherland-Hodgman against a single half-plane a·x <= b
    if not ring:
        return []
    if len(ring) == 1:
        return list(ring) if _dot(a, ring[0]) <= b else []

    out: list[Point] = []
    for cur, nxt in zip(ring, list(ring[1:]) + [ring[0]]):
        cv = _dot(a, cur) - b
        nv = _dot(a, nxt) - b
        if cv <= 0:
            out.append(cur)
        if (cv < 0 < nv) or (nv < 0 < cv):
            s = cv / (cv - nv)
            out.append(tuple(c + s * (n - c) for c, n in zip(cur, nxt)))
    return out


def intersect(hs: Sequence[ConvexPolytope]) -> ConvexPolytope:
    """Exact intersection of polytopes of a common dimension"""
    hs = list(hs)
    d = _same_dimension(hs)
    if any(h.is_empty for h in hs):
        return ConvexPolytope.empty(d)

    if d == 1:
        lo = max(h.lo for h in hs)
        hi = min(h.hi for h in hs)
        if lo > hi:
            return ConvexPolytope.empty(1)
        return convex_hull([(lo,), (hi,)], 1)

    current = hs[0]
    for h in hs[1:]:
        if h == current:
            continue
        ring: list[Point] = list(current.ring)
        for a, b in half_planes(h):
            ring = _clip(ring, a, b)
            if not ring:
                return ConvexPolytope.empty(2)
        current = convex_hull(ring, 2)
    return current


def contains_point(h: ConvexPolytope, p: Point) -> bool:
    if len(p) != h.d:
        raise DimensionMismatchError(f"point {p} does not have dimension {h.d}")
    if h.is_empty:
        return False
    if h.d == 1:
        return h.lo <= p[0] <= h.hi
    return all(_dot(a, p) <= b for a, b in half_planes(h))


def contains_polytope(outer: ConvexPolytope, inner: ConvexPolytope) -> bool:
    if outer.d != inner.d:
        raise DimensionMismatchError(f"mixed dimensions {outer.d} and {inner.d}")
    return all(contains_point(outer, v) for v in inner.vertices)


def safe_area(points: PointMultiset, f: int) -> ConvexPolytope:
    """Intersection of the hulls of every (|X|-f)-element sub-multiset of X"""
    points = list(points)
    if f < 0:
        raise GeometryError(f"fault count must be non-negative, got {f}")
    if len(points) <= f:
        raise GeometryError(f"need more than f={f} points, got {len(points)}")
    d = _infer_dimension(points, None)
    if f == 0:
        return convex_hull(points, d)

    keep = len(points) - f
    # positions are distinct, values may repeat: dedupe identical sub-multisets
    subsets = sorted({tuple(sorted(c)) for c in itertools.combinations(points, keep)})
    return intersect([convex_hull(c, d) for c in subsets])


def linear_combination(hs: Sequence[ConvexPolytope], ws: Sequence[Any]) -> ConvexPolytope:
    """L(hs; ws) = {Σ w_i p_i : p_i ∈ h_i}, a weighted Minkowski sum"""
    hs = list(hs)
    weights = [to_fraction(w) for w in ws]
    if len(hs) != len(weights):
        raise GeometryError(f"{len(hs)} polytopes but {len(weights)} weights")
    d = _same_dimension(hs)
    if any(h.is_empty for h in hs):
        raise EmptyPolytopeError("linear combination operands must be non-empty")
    if any(w < 0 for w in weights):
        raise GeometryError(f"weights must be non-negative: {weights}")
    if sum(weights, Fraction(0)) != 1:
        raise GeometryError(f"weights must sum to 1, got {sum(weights, Fraction(0))}")

    # hull(A ⊕ B) = hull(hull(A) ⊕ hull(B)), so fold one operand at a time
    acc: list[Point] = [tuple(Fraction(0) for _ in range(d))]
    for h, w in zip(hs, weights):
        if w == 0:
            continue
        sums = [tuple(a + w * v for a, v in zip(p, vertex)) for p in acc for vertex in h.vertices]
        acc = list(convex_hull(sums, d).vertices)
    return convex_hull(acc, d)


def _squared_distance_to_segment(p: Point, a: Point, b: Point) -> Fraction:
    u = _sub(b, a)
    uu = squared_norm(u)
    if uu == 0:
        return squared_euclidean(p, a)
    s = _dot(_sub(p, a), u) / uu
    s = min(Fraction(1), max(Fraction(0), s))
    proj = tuple(x + s * y for x, y in zip(a, u))
    return squared_euclidean(p, proj)


def squared_distance_to_polytope(p: Point, h: ConvexPolytope) -> Fraction:
    """Exact squared Euclidean distance from a point to a non-empty polytope"""
    if h.is_empty:
        raise EmptyPolytopeError("distance to an empty polytope is undefined")
    if contains_point(h, p):
        return Fraction(0)
    if h.d == 1:
        return min((p[0] - h.lo) ** 2, (p[0] - h.hi) ** 2)

    ring = h.ring
    if len(ring) == 1:
        return squared_euclidean(p, ring[0])
    if len(ring) == 2:
        return _squared_distance_to_segment(p, ring[0], ring[1])
    return min(
        _squared_distance_to_segment(p, a, b)
        for a, b in zip(ring, ring[1:] + ring[:1])
    )


def hausdorff_distance_squared(h1: ConvexPolytope, h2: ConvexPolytope) -> Fraction:
    """Exact d_H(h1, h2)^2; the outer maxima are attained at vertices"""
    if h1.d != h2.d:
        raise DimensionMismatchError(f"mixed dimensions {h1.d} and {h2.d}")
    if h1.is_empty or h2.is_empty:
        raise EmptyPolytopeError("Hausdorff distance needs non-empty operands")
    if h1 == h2:
        return Fraction(0)
    one_way = max(squared_distance_to_polytope(v, h2) for v in h1.vertices)
    other_way = max(squared_distance_to_polytope(v, h1) for v in h2.vertices)
    return max(one_way, other_way)


def sqrt_rational(value: Fraction) -> Decimal:
    """Square root of a non-negative rational, accurate well beyond DISTANCE_ERROR_BOUND"""
    if value < 0:
        raise GeometryError(f"square root of negative value {value}")
    with localcontext() as ctx:
        ctx.prec = _SQRT_PRECISION
        return (Decimal(value.numerator) / Decimal(value.denominator)).sqrt()


def hausdorff_distance(h1: ConvexPolytope, h2: ConvexPolytope) -> Decimal:
    return sqrt_rational(hausdorff_distance_squared(h1, h2))


def affine_dimension(h: ConvexPolytope) -> int:
    """-1 for empty, 0 for a point, 1 for a segment, 2 for a polygon"""
    return min(len(h.ring), h.d + 1) - 1


def polytope_measure(h: ConvexPolytope) -> Fraction:
    """Length (d=1) or area (d=2); zero for lower-dimensional polytopes"""
    if affine_dimension(h) < h.d:
        return Fraction(0)
    if h.d == 1:
        return h.hi - h.lo
    ring = h.ring
    twice_area = sum(
        (p[0] * q[1] - q[0] * p[1] for p, q in zip(ring, ring[1:] + ring[:1])),
        Fraction(0),
    )
    return twice_area / 2


@dataclass(frozen=True)
class TverbergPartition:
    parts: tuple[tuple[Point, ...], ...]
    witness: Point


def _set_partitions(size: int, blocks: int) -> Iterator[list[int]]:
    # restricted growth strings with exactly `blocks` labels
    labels = [0] * size

    def extend(i: int, used: int) -> Iterator[list[int]]:
        if i == size:
            if used == blocks:
                yield list(labels)
            return
        if blocks - used > size - i:
            return
        for label in range(min(used + 1, blocks)):
            labels[i] = label
            yield from extend(i + 1, max(used, label + 1))

    if size == 0:
        return iter(())
    return extend(0, 0)


def tverberg_witness(points: PointMultiset, f: int) -> TverbergPartition | None:
    """Exhaustive search for a partition into f+1 parts whose hulls share a point"""
    points = list(points)
    if f < 0 or len(points) < f + 1:
        return None
    d = _infer_dimension(points, None)

    for labels in _set_partitions(len(points), f + 1):
        parts = [
            tuple(p for p, label in zip(points, labels) if label == block)
            for block in range(f + 1)
        ]
        common = intersect([convex_hull(part, d) for part in parts])
        if not common.is_empty:
            return TverbergPartition(parts=tuple(parts), witness=common.vertices[0])
    return None


def point_to_json(p: Point) -> list[str]:
    return [format_fraction(c) for c in p]


def point_from_json(raw: Sequence[Any]) -> Point:
    return make_point(raw)


def polytope_to_json(h: ConvexPolytope) -> dict[str, Any]:
    return {"d": h.d, "vertices": [point_to_json(v) for v in h.vertices]}


def polytope_from_json(raw: dict[str, Any]) -> ConvexPolytope:
    try:
        d = int(raw["d"])
        vertices = [point_from_json(v) for v in raw["vertices"]]
    except (KeyError, TypeError) as e:
        raise GeometryError(f"malformed polytope record: {raw!r}") from e
    return convex_hull(vertices, d)
