import itertools
import os
from fractions import Fraction

import hypothesis.strategies as st
import pytest

from app.geometry import ConvexPolytope, convex_hull
from app.protocol import Config, Mode

CAMPAIGN_SEEDS_ENV_VAR = "CCLAB_CAMPAIGN_SEEDS"

rationals = st.fractions(min_value=-4, max_value=4, max_denominator=6)
unit_rationals = st.fractions(min_value=0, max_value=1, max_denominator=8)


def points(d: int, coords=rationals):
    return st.tuples(*[coords] * d)


def polytopes(d: int, max_points: int = 5, coords=rationals):
    return st.lists(points(d, coords), min_size=1, max_size=max_points).map(lambda xs: convex_hull(xs, d))


def product_combination(hs: list[ConvexPolytope], ws: list[Fraction]) -> ConvexPolytope:
    """Reference linear combination: hull of every weighted sum of one vertex per operand"""
    d = hs[0].d
    sums = [
        tuple(sum((w * v[k] for w, v in zip(ws, choice)), Fraction(0)) for k in range(d))
        for choice in itertools.product(*(h.vertices for h in hs))
    ]
    return convex_hull(sums, d)


# (n, f, d) shapes for slow-set runs, from the smallest admissible n upward
SLOW_SET_SHAPES = [(4, 1, 1), (5, 1, 1), (7, 2, 1), (5, 1, 2), (7, 1, 2)]


def shape_config(shape: tuple[int, int, int]) -> Config:
    n, f, d = shape
    return Config(n=n, f=f, d=d, epsilon=Fraction(1, 4) if d == 1 else Fraction(1, 2))


def campaign_seeds(default: int = 20) -> list[int]:
    return list(range(int(os.environ.get(CAMPAIGN_SEEDS_ENV_VAR, default))))


@pytest.fixture
def cfg_1d() -> Config:
    return Config(n=4, f=1, d=1, epsilon=Fraction(1, 10))


@pytest.fixture
def cfg_2d() -> Config:
    return Config(n=5, f=1, d=2, epsilon=Fraction(1, 2))


@pytest.fixture
def cfg_correct() -> Config:
    return Config(n=3, f=1, d=1, epsilon=Fraction(1, 10), mode=Mode.CORRECT_INPUTS)


def line_inputs(*values) -> dict:
    return {p: (Fraction(v),) for p, v in enumerate(values)}
