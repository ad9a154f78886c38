"""
Transition-matrix reconstruction of a recorded run.

Round t of the protocol is the row stochastic matrix M[t] acting on the vector
of polytopes v[t-1]. Rebuilding M[t] from the senders each process actually
used, and multiplying the backward product P[t] = M[t]...M[1] into v[0], must
reproduce every recorded h_i[t] exactly. Matrices are numpy object arrays of
Fractions, so products and comparisons stay exact.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Sequence

import numpy as np

from .config import format_fraction
from .geometry import ConvexPolytope, linear_combination, polytope_to_json
from .protocol import Mode
from .reports import CheckReport
from .simulator import SimTrace, TraceError

logger = logging.getLogger(__name__)

PolytopeVector = list[ConvexPolytope]


class MatrixError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StochMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = self.entries
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise MatrixError(f"expected a square matrix, got shape {a.shape}")
        for i, row in enumerate(a):
            if any(x < 0 for x in row):
                raise MatrixError(f"row {i} has a negative entry")
            if sum(row, Fraction(0)) != 1:
                raise MatrixError(f"row {i} sums to {sum(row, Fraction(0))}, not 1")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "StochMatrix":
        entries = np.array([[Fraction(x) for x in row] for row in rows], dtype=object)
        return cls(entries)

    @classmethod
    def identity(cls, n: int) -> "StochMatrix":
        return cls.from_rows([[int(i == j) for j in range(n)] for i in range(n)])

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, index):
        return self.entries[index]

    def __eq__(self, other) -> bool:
        if not isinstance(other, StochMatrix):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool((self.entries == other.entries).all())

    def __matmul__(self, other: "StochMatrix") -> "StochMatrix":
        return mat_mul(self, other)

    def to_json(self) -> list[list[str]]:
        return [[format_fraction(x) for x in row] for row in self.entries]


def mat_mul(a: StochMatrix, b: StochMatrix) -> StochMatrix:
    if a.n != b.n:
        raise MatrixError(f"cannot multiply {a.n}x{a.n} by {b.n}x{b.n}")
    return StochMatrix(np.dot(a.entries, b.entries))


def mat_vec(a: StochMatrix, v: PolytopeVector) -> PolytopeVector:
    """Entry i is L(v; A_i) over the support of row i; zero weights are dropped"""
    if len(v) != a.n:
        raise MatrixError(f"vector of length {len(v)} for a {a.n}x{a.n} matrix")
    out = []
    for i, row in enumerate(a.entries):
        support = [k for k, w in enumerate(row) if w != 0]
        if not support:
            raise MatrixError(f"row {i} has empty support")
        out.append(linear_combination([v[k] for k in support], [row[k] for k in support]))
    return out


def build_M(trace: SimTrace, t: int) -> StochMatrix:
    if t < 1:
        raise MatrixError(f"transition matrices start at round 1, got {t}")
    n = trace.n
    crashed_next = trace.F_of_t(t + 1)
    rows = []
    for i in range(n):
        if i in crashed_next:
            rows.append([Fraction(1, n)] * n)
            continue
        senders = set(trace.senders(i, t))
        if not senders:
            raise TraceError(f"process {i} round {t} records an empty MSG set")
        w = Fraction(1, len(senders))
        rows.append([w if k in senders else Fraction(0) for k in range(n)])
    return StochMatrix.from_rows(rows)


def init_v0(trace: SimTrace) -> PolytopeVector:
    """h_i[0] where it was sent on; processes in F[1] copy the lowest-id fault-free process"""
    if not trace.fault_free:
        raise MatrixError("trace has no fault-free process")
    m = trace.fault_free[0]
    crashed_first = trace.F_of_t(1)
    return [trace.h(m if i in crashed_first else i, 0) for i in range(trace.n)]


def backward_product(ms: Sequence[StochMatrix]) -> list[StochMatrix]:
    """[P[1], ..., P[T]] with P[t] = M[t] M[t-1] ... M[1]"""
    products: list[StochMatrix] = []
    for m in ms:
        products.append(m if not products else m @ products[-1])
    return products


def ergodicity(a: StochMatrix | np.ndarray) -> tuple[Fraction, Fraction]:
    """(delta, lambda): largest column spread and 1 - the smallest row overlap"""
    entries = a.entries if isinstance(a, StochMatrix) else a
    n = entries.shape[0]
    delta, lam = Fraction(0), Fraction(0)
    for i, j in combinations(range(n), 2):
        ri, rj = entries[i], entries[j]
        delta = max(delta, max(abs(x - y) for x, y in zip(ri, rj)))
        overlap = sum((min(x, y) for x, y in zip(ri, rj)), Fraction(0))
        lam = max(lam, 1 - overlap)
    return delta, lam


def transition_matrices(trace: SimTrace) -> list[StochMatrix]:
    return [build_M(trace, t) for t in range(1, trace.t_end + 1)]


def check_matrix_equality(trace: SimTrace) -> CheckReport:
    """(P[tau] v[0])_i equals the recorded h_i[tau] for every i outside F[tau+1]"""
    report = CheckReport(name="matrix_equality")
    v0 = init_v0(trace)
    for i in range(trace.n):
        if i not in trace.F_of_t(1):
            report.expect(v0[i] == trace.h(i, 0), f"v_{i}[0] differs from h_{i}[0]")

    for tau, p in enumerate(backward_product(transition_matrices(trace)), start=1):
        predicted = mat_vec(p, v0)
        for i in range(trace.n):
            if i in trace.F_of_t(tau + 1):
                continue
            actual = trace.h(i, tau)
            report.expect(
                predicted[i] == actual,
                f"round {tau} process {i}: matrix form {polytope_to_json(predicted[i])} "
                f"!= protocol {polytope_to_json(actual)}",
            )
    logger.debug(f"Matrix equality: {report.checked} entries, {report.violation_count} mismatches")
    return report


def check_decay(trace: SimTrace) -> CheckReport:
    report = CheckReport(name="decay")
    n = trace.n
    rate = 1 - Fraction(1, n)
    crashed_first = trace.F_of_t(1)
    fault_free = trace.fault_free
    faulty = trace.faulty
    correct_mode = trace.config.mode == Mode.CORRECT_INPUTS

    prod_lambda = Fraction(1)
    worst_ratio = Fraction(0)
    p = None
    for t in range(1, trace.t_end + 1):
        m = build_M(trace, t)
        p = m if p is None else m @ p
        _, lam = ergodicity(m)
        delta_p, _ = ergodicity(p)
        prod_lambda *= lam
        bound = rate ** t

        report.expect(lam <= rate, f"round {t}: lambda(M) = {lam} > 1-1/n")
        report.expect(delta_p <= prod_lambda, f"round {t}: delta(P) = {delta_p} > prod lambda = {prod_lambda}")
        report.expect(prod_lambda <= bound, f"round {t}: prod lambda = {prod_lambda} > (1-1/n)^t")
        worst_ratio = max(worst_ratio, delta_p / bound)

        for i, j in combinations(fault_free, 2):
            spread = max(abs(x - y) for x, y in zip(p[i], p[j]))
            report.expect(spread <= bound, f"round {t}: |P_{i}k - P_{j}k| = {spread} > (1-1/n)^t")

        live = [i for i in range(n) if i not in trace.F_of_t(t + 1)]
        columns = range(n) if correct_mode else [k for k in range(n) if k not in faulty]
        floor = Fraction(1, n)
        for i, j in combinations(live, 2):
            report.expect(
                any(m[i][k] >= floor and m[j][k] >= floor for k in columns),
                f"round {t}: rows {i} and {j} of M share no column with both entries >= 1/n",
            )

        for j in live:
            for k in crashed_first:
                report.expect(p[j][k] == 0, f"round {t}: P_{j},{k} = {p[j][k]} but {k} is in F[1]")

    report.details = {
        "rate": format_fraction(rate),
        "final_prod_lambda": format_fraction(prod_lambda),
        "worst_delta_over_bound": format_fraction(worst_ratio),
    }
    return report
