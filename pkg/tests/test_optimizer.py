from fractions import Fraction

import pytest
from hypothesis import given, settings
from pydantic import ValidationError

from app.geometry import ConvexPolytope, EmptyPolytopeError, contains_point, convex_hull
from app.optimizer import (
    CostFunction,
    check_lipschitz,
    lipschitz_bound,
    minimize_over_polytope,
    optimize_run,
    upper_sqrt,
)
from app.scenarios import majority_inputs, random_fault_plan, random_inputs
from app.simulator import SchedulerPolicy, run
from tests.conftest import line_inputs, polytopes

F = Fraction
SQUARE = convex_hull([(F(1), F(1)), (F(2), F(1)), (F(2), F(2)), (F(1), F(2))])


def seg(a, b):
    return convex_hull([(F(a),), (F(b),)], 1)


def linear(*coeffs):
    return CostFunction(kind="linear", coeffs=list(coeffs))


def quadratic(*center, **kw):
    return CostFunction(kind="quadratic", center=list(center), **kw)


class TestMinimize:
    def test_linear_on_a_segment(self):
        assert minimize_over_polytope(linear(1), seg(1, 2)) == ((F(1),), F(1))

    def test_quadratic_outside_the_segment(self):
        assert minimize_over_polytope(quadratic(3), seg(1, 2)) == ((F(2),), F(1))

    def test_quadratic_inside_the_segment(self):
        assert minimize_over_polytope(quadratic(F(3, 2)), seg(1, 2)) == ((F(3, 2),), F(0))

    def test_norm_squared_on_a_square(self):
        assert minimize_over_polytope(quadratic(0, 0), SQUARE) == ((F(1), F(1)), F(2))

    def test_quadratic_edge_minimizer(self):
        y, value = minimize_over_polytope(quadratic(3, F(3, 2)), SQUARE)
        assert y == (F(2), F(3, 2))
        assert value == 1

    def test_max_affine_kink_in_one_dimension(self):
        cost = CostFunction(kind="max-affine", pieces=[{"slope": [1]}, {"slope": [-1]}])
        assert minimize_over_polytope(cost, seg(-1, 2)) == ((F(0),), F(0))

    def test_max_affine_triple_point(self):
        cost = CostFunction(
            kind="max-affine",
            pieces=[{"slope": [1, 0]}, {"slope": [0, 1]}, {"slope": [-1, -1], "intercept": 1}],
        )
        box = convex_hull([(F(0), F(0)), (F(1), F(0)), (F(0), F(1)), (F(1), F(1))])
        assert minimize_over_polytope(cost, box) == ((F(1, 3), F(1, 3)), F(1, 3))

    def test_ties_go_to_the_smallest_point(self):
        y, _ = minimize_over_polytope(linear(0, 1), SQUARE)
        assert y == (F(1), F(1))

    def test_empty_polytope(self):
        with pytest.raises(EmptyPolytopeError):
            minimize_over_polytope(linear(1), ConvexPolytope.empty(1))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            minimize_over_polytope(linear(1), SQUARE)

    @settings(max_examples=50, deadline=None)
    @given(polytopes(2, max_points=6))
    def test_minimum_is_attained_and_not_beaten_by_vertices(self, h):
        cost = quadratic(F(1, 3), F(-1, 2), weights=[[2, 1], [1, 1]])
        y, value = minimize_over_polytope(cost, h)
        assert contains_point(h, y)
        assert all(value <= cost.evaluate(v) for v in h.vertices)


class TestCostFunction:
    def test_identity_weights_by_default(self):
        assert quadratic(0, 0).weights == [[1, 0], [0, 1]]

    @pytest.mark.parametrize("weights", [[[1, 2], [0, 1]], [[1, 2], [2, 1]], [[-1, 0], [0, 1]]])
    def test_rejects_bad_weights(self, weights):
        with pytest.raises(ValidationError):
            quadratic(0, 0, weights=weights)

    def test_pieces_must_agree_on_dimension(self):
        with pytest.raises(ValidationError):
            CostFunction(kind="max-affine", pieces=[{"slope": [1]}, {"slope": [1, 1]}])

    def test_linear_needs_coeffs(self):
        with pytest.raises(ValidationError):
            CostFunction(kind="linear")

    def test_evaluate_checks_dimension(self):
        with pytest.raises(ValueError):
            linear(1, 1).evaluate((F(0),))


class TestLipschitz:
    def test_linear_bound_is_the_norm(self, cfg_2d):
        assert lipschitz_bound(linear(3, 4), cfg_2d) == 5

    def test_given_bound_wins(self, cfg_1d):
        assert lipschitz_bound(CostFunction(kind="linear", coeffs=[3], B=7), cfg_1d) == 7

    def test_max_affine_uses_the_steepest_piece(self, cfg_1d):
        cost = CostFunction(kind="max-affine", pieces=[{"slope": [2]}, {"slope": [-5]}])
        assert lipschitz_bound(cost, cfg_1d) == 5

    def test_upper_sqrt_never_undershoots(self):
        r = upper_sqrt(F(2))
        assert r * r >= 2
        assert r - F(141421356, 10 ** 8) < F(1, 10 ** 8)

    def test_quadratic_spot_check(self, cfg_2d):
        report = check_lipschitz(quadratic(F(1, 2), 0, weights=[[2, 0], [0, 1]]), cfg_2d, samples=100)
        assert report.passed, report.violations

    def test_understated_bound_is_caught(self, cfg_1d):
        report = check_lipschitz(CostFunction(kind="linear", coeffs=[10], B=1), cfg_1d, samples=50)
        assert not report.passed


class TestOptimizeRun:
    def test_identical_inputs(self, cfg_1d):
        trace = run(cfg_1d, line_inputs(*[F(1, 4)] * 4), policy=SchedulerPolicy(seed=1))
        result = optimize_run(trace, linear(1))
        assert result.report.passed
        assert set(result.minimizers.values()) == {(F(1, 4),)}
        assert result.to_dict()["report"]["details"]["max_value_spread"] == "0/1"

    def test_majority_point_is_never_beaten(self, cfg_1d):
        inputs = majority_inputs(cfg_1d, (F(1, 2),), rng=3)
        trace = run(cfg_1d, inputs, policy=SchedulerPolicy(seed=3))
        result = optimize_run(trace, quadratic(F(9, 10)))
        assert result.report.passed, result.report.violations
        assert result.report.details["x_star"] == ["1/2"]
        assert all(v <= F(4, 25) for v in result.values.values())

    @pytest.mark.parametrize("seed", range(4))
    def test_value_spread_within_epsilon_B(self, cfg_2d, seed):
        trace = run(cfg_2d, random_inputs(cfg_2d, seed), random_fault_plan(cfg_2d, seed), SchedulerPolicy(seed=seed))
        result = optimize_run(trace, linear(1, -2))
        assert result.report.passed, result.report.violations
        assert sorted(result.values) == sorted(trace.fault_free)
