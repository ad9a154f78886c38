"""
Post-hoc property checks over a recorded SimTrace.

Every containment and distance comparison is exact; the only approximation is
the square root taken when a Hausdorff distance is reported.
"""

import logging
from itertools import combinations
from typing import Optional

from .config import format_fraction
from .geometry import (
    ConvexPolytope,
    Point,
    affine_dimension,
    contains_polytope,
    convex_hull,
    hausdorff_distance_squared,
    polytope_measure,
    polytope_to_json,
    safe_area,
    sqrt_rational,
)
from .matrix_oracle import check_decay, check_matrix_equality
from .protocol import Config, Mode
from .reports import CheckReport, VerdictReport
from .scenarios import corner_inputs, slow_set_policy
from .simulator import FaultPlan, SimTrace, check_trace_structure, run
from .stable_vector import (
    DeliveredSet,
    check_containment,
    check_liveness,
    check_no_fabrication,
    smallest_set,
)

logger = logging.getLogger(__name__)


def check_structure(trace: SimTrace) -> CheckReport:
    report = CheckReport(name="structure")
    report.checked = len(trace.events)
    for violation in check_trace_structure(trace):
        report.fail(violation)
    return report


def check_stable_vector(trace: SimTrace) -> CheckReport:
    report = CheckReport(name="stable_vector")
    sets = list(trace.delivered.values())
    report.expect(check_liveness(sets, trace.n, trace.config.f), "a delivered set is smaller than n-f")
    report.expect(check_containment(sets), "delivered sets are not ordered by inclusion")
    report.expect(check_no_fabrication(sets, trace.submitted), "a delivered tuple was never submitted")

    fault_free_sets = [trace.delivered[p] for p in trace.fault_free if p in trace.delivered]
    report.expect(
        len(fault_free_sets) == len(trace.fault_free),
        "a fault-free process never received its stable vector",
    )
    if fault_free_sets:
        literal = set.intersection(*(set(s.tuples) for s in fault_free_sets))
        report.expect(
            literal == set(smallest_set(fault_free_sets).tuples),
            "intersection of fault-free delivered sets differs from the smallest one",
        )
    report.details = {"sizes": {str(p): len(s) for p, s in sorted(trace.delivered.items())}}
    return report


def check_validity(trace: SimTrace) -> CheckReport:
    """Every fault-free h_i[t] lies inside the hull of the correct inputs"""
    report = CheckReport(name="validity")
    hull = convex_hull(trace.correct_inputs(), trace.config.d)
    for p in trace.fault_free:
        for t in range(trace.t_end + 1):
            h = trace.h(p, t)
            report.expect(
                contains_polytope(hull, h),
                f"h_{p}[{t}] = {polytope_to_json(h)} leaves the hull of correct inputs",
            )
    report.details = {"correct_hull": polytope_to_json(hull)}
    return report


def max_decision_distance_squared(trace: SimTrace, procs: Optional[list[int]] = None):
    procs = trace.fault_free if procs is None else procs
    decisions = [trace.decisions[p] for p in procs]
    return max(
        (hausdorff_distance_squared(a, b) for a, b in combinations(decisions, 2)),
        default=0,
    )


def check_agreement(trace: SimTrace, epsilon=None) -> CheckReport:
    """Pairwise Hausdorff distance of fault-free decisions below epsilon, compared squared"""
    report = CheckReport(name="agreement")
    epsilon = trace.config.epsilon if epsilon is None else epsilon
    missing = [p for p in trace.fault_free if p not in trace.decisions]
    for p in missing:
        report.fail(f"fault-free process {p} never decided")

    decided = [p for p in trace.fault_free if p in trace.decisions]
    worst = max_decision_distance_squared(trace, decided)
    for a, b in combinations(decided, 2):
        dist_sq = hausdorff_distance_squared(trace.decisions[a], trace.decisions[b])
        report.expect(
            dist_sq < epsilon ** 2,
            f"d_H(h_{a}, h_{b}) = {sqrt_rational(dist_sq)} is not below epsilon = {format_fraction(epsilon)}",
        )
    report.details = {
        "epsilon": format_fraction(epsilon),
        "max_hausdorff_squared": format_fraction(worst),
        "max_hausdorff": str(sqrt_rational(worst)),
    }
    return report


def common_round0_set(trace: SimTrace) -> DeliveredSet:
    """
    Z: the smallest delivered set among processes that sent round 1 messages.
    Every such set is a prefix of the commit sequence, so the smallest one is
    their intersection, and it is contained in the fault-free intersection.
    """
    senders = [p for p in range(trace.n) if p not in trace.F_of_t(1) and p in trace.delivered]
    return smallest_set([trace.delivered[p] for p in senders])


def compute_IZ(trace: SimTrace) -> ConvexPolytope:
    values = common_round0_set(trace).values()
    if trace.config.mode == Mode.CORRECT_INPUTS:
        return convex_hull(values, trace.config.d)
    return safe_area(values, trace.config.f)


def check_lower_bound(trace: SimTrace) -> CheckReport:
    """I_Z inside h_i[t] for every i outside F[t+1]"""
    report = CheckReport(name="lower_bound")
    iz = compute_IZ(trace)
    for (p, t), h in sorted(trace.states.items()):
        if p in trace.F_of_t(t + 1):
            continue
        report.expect(
            contains_polytope(h, iz),
            f"I_Z = {polytope_to_json(iz)} is not inside h_{p}[{t}] = {polytope_to_json(h)}",
        )

    fault_free_sets = [trace.delivered[p] for p in trace.fault_free if p in trace.delivered]
    z = common_round0_set(trace)
    report.details = {
        "I_Z": polytope_to_json(iz),
        "I_Z_dimension": affine_dimension(iz),
        "I_Z_measure": format_fraction(polytope_measure(iz)),
        "Z_size": len(z),
        "Z_matches_fault_free_intersection": bool(fault_free_sets) and len(smallest_set(fault_free_sets)) == len(z),
    }
    return report


def check_decisions(trace: SimTrace) -> CheckReport:
    report = CheckReport(name="decisions")
    for p, decided in sorted(trace.decisions.items()):
        report.expect(decided == trace.h(p, trace.t_end), f"decision of {p} differs from h_{p}[t_end]")
    return report


def _summary(trace: SimTrace) -> dict:
    cfg = trace.config
    return {
        "n": cfg.n,
        "f": cfg.f,
        "d": cfg.d,
        "mode": cfg.mode.value,
        "epsilon": format_fraction(cfg.epsilon),
        "t_end": trace.t_end,
        "scheduler": trace.policy.kind.value,
        "seed": trace.policy.seed,
        "faulty": sorted(trace.faulty),
        "crashed": sorted(trace.crashed),
    }


def verify_trace(trace: SimTrace) -> VerdictReport:
    verdict = VerdictReport(summary=_summary(trace))
    verdict.checks = [
        check_structure(trace),
        check_stable_vector(trace),
        check_validity(trace),
        check_agreement(trace),
        check_matrix_equality(trace),
        check_decay(trace),
        check_lower_bound(trace),
        check_decisions(trace),
    ]
    verdict.summary["max_hausdorff"] = verdict.check("agreement").details["max_hausdorff"]
    verdict.summary["I_Z_measure"] = verdict.check("lower_bound").details["I_Z_measure"]

    if verdict.passed:
        logger.info(f"✅ All {len(verdict.checks)} checks passed (seed={trace.policy.seed})")
    else:
        logger.warning(f"⚠️ Failed checks {verdict.failed_checks()} (seed={trace.policy.seed})")
    return verdict


def check_optimality_scenario(
    cfg: Config,
    seed: int = 0,
    inputs: Optional[dict[int, Point]] = None,
) -> CheckReport:
    """
    Witness execution for optimality: the last f processes are slow and nobody
    crashes. Processes outside the slow set must decide on round 0 values and
    round messages from one another only, and every decision contains I_Z.
    """
    report = CheckReport(name="optimality_scenario")
    if cfg.mode != Mode.INCORRECT_INPUTS:
        raise ValueError("the slow-set witness execution applies to incorrect-inputs mode")

    inputs = corner_inputs(cfg) if inputs is None else inputs
    policy = slow_set_policy(cfg, seed)
    trace = run(cfg, inputs, FaultPlan(), policy)
    slow = set(policy.slow_set)
    fast = [p for p in range(cfg.n) if p not in slow]

    for p in fast:
        report.expect(
            not (trace.delivered[p].senders & slow),
            f"process {p} received a slow process's input",
        )
        for t in range(1, trace.t_end + 1):
            report.expect(
                not (set(trace.senders(p, t)) & slow),
                f"process {p} used a slow process's round {t} message",
            )

    iz = compute_IZ(trace)
    for p in fast:
        report.expect(
            contains_polytope(trace.decisions[p], iz),
            f"decision of {p} does not contain I_Z = {polytope_to_json(iz)}",
        )
    worst = max_decision_distance_squared(trace, fast)
    report.expect(worst < cfg.epsilon ** 2, f"fast decisions are {sqrt_rational(worst)} apart")

    degenerate = cfg.n == (cfg.d + 2) * cfg.f + 1 and inputs == corner_inputs(cfg)
    if degenerate:
        report.expect(affine_dimension(iz) == 0, f"degenerate corner inputs gave I_Z = {polytope_to_json(iz)}")

    report.details = {
        "seed": seed,
        "slow_set": sorted(slow),
        "I_Z": polytope_to_json(iz),
        "I_Z_dimension": affine_dimension(iz),
        "degenerate": degenerate,
        "max_hausdorff": str(sqrt_rational(worst)),
    }
    return report
