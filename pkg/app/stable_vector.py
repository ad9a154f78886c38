"""
Round-0 stable vector primitive.

Backed by the simulator rather than a message protocol: submitted tuples are
appended to one global commit sequence, and every delivered set is a prefix of
that sequence of length at least n-f. Prefixes of one sequence are totally
ordered by inclusion, which is the Containment property; Liveness follows
because at least n-f processes submit and get committed.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geometry import Point

logger = logging.getLogger(__name__)


class StableVectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class InputTuple:
    value: Point
    sender: int
    round: int = 0

    def __post_init__(self):
        if self.round != 0:
            raise StableVectorError(f"stable vector carries round 0 tuples only, got round {self.round}")


@dataclass(frozen=True)
class DeliveredSet:
    owner: int
    tuples: tuple[InputTuple, ...]

    @property
    def senders(self) -> frozenset[int]:
        return frozenset(t.sender for t in self.tuples)

    def values(self) -> list[Point]:
        return [t.value for t in self.tuples]

    def issubset(self, other: "DeliveredSet") -> bool:
        return set(self.tuples) <= set(other.tuples)

    def __len__(self) -> int:
        return len(self.tuples)


class StableVector:
    """Global commit sequence plus the frozen per-process prefixes handed out"""

    def __init__(self, n: int, f: int):
        self.n = n
        self.f = f
        self._submitted: dict[int, InputTuple] = {}
        self._committed: list[InputTuple] = []
        self._committed_senders: set[int] = set()
        self._dropped: set[int] = set()
        self._delivered: dict[int, DeliveredSet] = {}

    @property
    def threshold(self) -> int:
        return self.n - self.f

    @property
    def commit_sequence(self) -> tuple[InputTuple, ...]:
        return tuple(self._committed)

    @property
    def delivered(self) -> dict[int, DeliveredSet]:
        return dict(self._delivered)

    def submit(self, p: int, x: Point) -> InputTuple:
        if p in self._submitted:
            raise StableVectorError(f"process {p} already submitted")
        entry = InputTuple(value=x, sender=p)
        self._submitted[p] = entry
        return entry

    def pending(self) -> list[int]:
        """Submitters whose tuple may still be committed"""
        return sorted(
            p for p in self._submitted
            if p not in self._committed_senders and p not in self._dropped
        )

    def commit(self, p: int) -> InputTuple:
        if p not in self.pending():
            raise StableVectorError(f"process {p} has no pending tuple to commit")
        entry = self._submitted[p]
        self._committed.append(entry)
        self._committed_senders.add(p)
        return entry

    def drop(self, p: int) -> None:
        """The submitter crashed before its tuple reached the commit point"""
        if p in self._submitted and p not in self._committed_senders:
            self._dropped.add(p)
            logger.debug(f"Stable vector dropped uncommitted tuple of process {p}")

    def can_deliver(self, p: int) -> bool:
        return p not in self._delivered and len(self._committed) >= self.threshold

    def deliver(self, p: int, length: int) -> DeliveredSet:
        """Freeze R_p as the first `length` committed tuples"""
        if p in self._delivered:
            raise StableVectorError(f"process {p} already received its set")
        if not self.threshold <= length <= len(self._committed):
            raise StableVectorError(
                f"prefix length {length} outside [{self.threshold}, {len(self._committed)}]"
            )
        delivered = DeliveredSet(owner=p, tuples=tuple(self._committed[:length]))
        self._delivered[p] = delivered
        return delivered


def check_containment(sets: Iterable[DeliveredSet]) -> bool:
    ordered = sorted(sets, key=len)
    return all(a.issubset(b) for a, b in zip(ordered, ordered[1:]))


def check_liveness(sets: Iterable[DeliveredSet], n: int, f: int) -> bool:
    return all(len(s) >= n - f and len(s.senders) == len(s) for s in sets)


def check_no_fabrication(sets: Iterable[DeliveredSet], submitted: dict[int, Point]) -> bool:
    return all(
        t.sender in submitted and submitted[t.sender] == t.value
        for s in sets
        for t in s.tuples
    )


def smallest_set(sets: Sequence[DeliveredSet]) -> DeliveredSet:
    """Z for a Containment chain: its minimum equals the n-way intersection"""
    if not sets:
        raise StableVectorError("no delivered sets")
    return min(sets, key=lambda s: (len(s), s.owner))
