"""
The convex consensus protocol as a per-process state machine.

Round 0 consumes the stable vector's delivered set once; rounds 1..t_end fire
when the round's message store first reaches n-f entries and replace h by the
uniform linear combination of the received polytopes.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from pydantic import BaseModel, ConfigDict, model_validator

from .config import Rational
from .geometry import (
    SUPPORTED_DIMENSIONS,
    ConvexPolytope,
    Point,
    convex_hull,
    linear_combination,
    safe_area,
)
from .stable_vector import DeliveredSet

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    INCORRECT_INPUTS = "incorrect-inputs"
    CORRECT_INPUTS = "correct-inputs"


class Config(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int
    f: int
    d: int = 1
    epsilon: Rational = Fraction(1, 10)
    mu: Rational = Fraction(0)
    U: Rational = Fraction(1)
    mode: Mode = Mode.INCORRECT_INPUTS

    @model_validator(mode="after")
    def check_resilience(self):
        if self.f < 0:
            raise ValueError(f"f must be non-negative, got {self.f}")
        if self.d not in SUPPORTED_DIMENSIONS:
            raise ValueError(f"d must be one of {SUPPORTED_DIMENSIONS}, got {self.d}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.mu > self.U:
            raise ValueError(f"mu={self.mu} exceeds U={self.U}")
        if self.n < self.min_processes:
            raise ValueError(
                f"{self.mode.value} mode needs n >= {self.min_processes} for f={self.f}, d={self.d}; got n={self.n}"
            )
        return self

    @property
    def min_processes(self) -> int:
        if self.mode == Mode.CORRECT_INPUTS:
            return max(2 * self.f + 1, 1)
        return (self.d + 2) * self.f + 1

    @property
    def quorum(self) -> int:
        return self.n - self.f

    def in_domain(self, x: Point) -> bool:
        return len(x) == self.d and all(self.mu <= c <= self.U for c in x)


class ProtocolError(RuntimeError):
    pass


class DuplicateMessageError(ProtocolError):
    """A (sender, round) pair was delivered twice"""


class InvariantViolation(ProtocolError):
    pass


def compute_t_end(cfg: Config) -> int:
    """Smallest t >= 1 with (1-1/n)^t * sqrt(d n^2 max(U^2, mu^2)) < epsilon, squared and exact"""
    bound_sq = cfg.d * cfg.n ** 2 * max(cfg.U ** 2, cfg.mu ** 2)
    eps_sq = cfg.epsilon ** 2
    decay_sq = (1 - Fraction(1, cfg.n)) ** 2

    t = 1
    value = decay_sq * bound_sq
    while value >= eps_sq:
        t += 1
        value *= decay_sq
    return t


@dataclass(frozen=True)
class RoundMessage:
    payload: ConvexPolytope
    sender: int
    round: int

    def __post_init__(self):
        if self.round < 1:
            raise ProtocolError(f"round messages start at round 1, got {self.round}")


def round0_decide_h0(delivered: DeliveredSet, cfg: Config) -> ConvexPolytope:
    """h_i[0] from R_i: safe area with incorrect inputs, plain hull with correct inputs"""
    if len(delivered) < cfg.quorum:
        raise ProtocolError(f"delivered set of size {len(delivered)} is below n-f={cfg.quorum}")

    values = delivered.values()
    if cfg.mode == Mode.CORRECT_INPUTS:
        h0 = convex_hull(values, cfg.d)
    else:
        h0 = safe_area(values, cfg.f)

    if h0.is_empty:
        raise InvariantViolation(f"empty h[0] at process {delivered.owner} from {len(values)} inputs")
    return h0


@dataclass
class ProcessState:
    pid: int
    x: Point
    cfg: Config
    t_end: int
    t: int = 0
    h: Optional[ConvexPolytope] = None
    msgs: dict[int, dict[int, RoundMessage]] = field(default_factory=dict)
    fired: set[int] = field(default_factory=set)
    delivered: Optional[DeliveredSet] = None
    decided: Optional[ConvexPolytope] = None
    history: dict[int, ConvexPolytope] = field(default_factory=dict)
    late: list[RoundMessage] = field(default_factory=list)

    def __post_init__(self):
        if not self.cfg.in_domain(self.x):
            raise ProtocolError(f"input {self.x} of process {self.pid} is outside [mu, U]^d")

    def on_delivered(self, delivered: DeliveredSet) -> RoundMessage:
        """Lines 3-6: compute h[0], then enter round 1"""
        if self.delivered is not None:
            raise ProtocolError(f"process {self.pid} consumed its stable vector twice")
        self.delivered = delivered
        self.h = round0_decide_h0(delivered, self.cfg)
        self.history[0] = self.h
        return self.enter_round(1)

    def enter_round(self, t: int) -> RoundMessage:
        """Lines 7-9: store our own message and hand it back for broadcast"""
        self.t = t
        own = RoundMessage(payload=self.h, sender=self.pid, round=t)
        self.msgs.setdefault(t, {})[self.pid] = own
        return own

    def on_round_message(self, msg: RoundMessage) -> bool:
        """Lines 10-11; returns False when the round's threshold already fired"""
        store = self.msgs.setdefault(msg.round, {})
        if msg.sender in store or any(m.sender == msg.sender and m.round == msg.round for m in self.late):
            raise DuplicateMessageError(
                f"process {self.pid} got a second round {msg.round} message from {msg.sender}"
            )
        if msg.round in self.fired:
            self.late.append(msg)
            logger.debug(f"Process {self.pid}: late round {msg.round} message from {msg.sender}")
            return False
        store[msg.sender] = msg
        return True

    def threshold_ready(self) -> bool:
        return (
            self.decided is None
            and self.t >= 1
            and self.t not in self.fired
            and len(self.msgs.get(self.t, {})) >= self.cfg.quorum
        )

    def used_senders(self, t: int) -> list[int]:
        return sorted(self.msgs.get(t, {}))

    def on_threshold(self) -> Optional[RoundMessage]:
        """Lines 12-15; returns the next round's message, or None once decided"""
        if not self.threshold_ready():
            raise ProtocolError(f"process {self.pid} has no threshold to fire in round {self.t}")

        t = self.t
        ys = [self.msgs[t][sender].payload for sender in self.used_senders(t)]
        weight = Fraction(1, len(ys))
        self.h = linear_combination(ys, [weight] * len(ys))
        self.fired.add(t)
        self.history[t] = self.h

        if t < self.t_end:
            return self.enter_round(t + 1)
        self.decided = self.h
        logger.debug(f"Process {self.pid} decided at round {t}")
        return None
