"""
Deterministic seeded discrete-event simulator for the convex consensus protocol.

Channels are reliable, exactly-once and FIFO. A broadcast is n-1 separate
channel sends, each its own scheduler step, so a crash may fall between them.
Time is the global event count; all nondeterminism (next action, stable-vector
commit instants and prefix lengths) comes from one seeded scheduler.
"""

import gzip
import json
import logging
import os
from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Any, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import Rational
from .geometry import (
    ConvexPolytope,
    Point,
    make_point,
    point_from_json,
    point_to_json,
    polytope_from_json,
    polytope_to_json,
)
from .protocol import Config, Mode, ProcessState, RoundMessage, compute_t_end
from .stable_vector import DeliveredSet, InputTuple, StableVector

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class TraceError(ValueError):
    """Malformed or incomplete trace"""


class SchedulerKind(str, Enum):
    SEEDED_RANDOM = "seeded-random"
    SLOW_SET = "slow-set"
    ROUND_ROBIN = "round-robin"


class SchedulerPolicy(BaseModel):
    kind: SchedulerKind = SchedulerKind.SEEDED_RANDOM
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    slow_set: list[int] = []

    def validate_against(self, cfg: Config) -> None:
        if self.kind == SchedulerKind.SLOW_SET:
            if len(set(self.slow_set)) > cfg.f:
                raise ValueError(f"slow set {self.slow_set} is larger than f={cfg.f}")
        elif self.slow_set:
            raise ValueError(f"slow_set only applies to the {SchedulerKind.SLOW_SET.value} scheduler")
        for p in self.slow_set:
            if not 0 <= p < cfg.n:
                raise ValueError(f"slow process id {p} out of range")


class CrashPoint(BaseModel):
    """Crash after `after_sends` sends of round `round`, or at global event `at_event`"""

    round: Optional[int] = Field(default=None, ge=0)
    after_sends: int = Field(default=0, ge=0)
    at_event: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def check_one_trigger(self):
        if (self.round is None) == (self.at_event is None):
            raise ValueError("a crash point needs exactly one of round or at_event")
        return self


class FaultPlan(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    faulty: list[int] = []
    incorrect_inputs: dict[int, list[Rational]] = {}
    crash_points: dict[int, CrashPoint] = {}

    @model_validator(mode="after")
    def check_members(self):
        members = set(self.faulty)
        if len(members) != len(self.faulty):
            raise ValueError(f"duplicate ids in faulty set {self.faulty}")
        for p in list(self.incorrect_inputs) + list(self.crash_points):
            if p not in members:
                raise ValueError(f"process {p} has a fault but is not in the faulty set")
        return self

    def validate_against(self, cfg: Config) -> None:
        if len(self.faulty) > cfg.f:
            raise ValueError(f"{len(self.faulty)} faulty processes exceed f={cfg.f}")
        for p in self.faulty:
            if not 0 <= p < cfg.n:
                raise ValueError(f"faulty process id {p} out of range")
        if cfg.mode == Mode.CORRECT_INPUTS and self.incorrect_inputs:
            raise ValueError("correct-inputs mode does not allow incorrect inputs")
        for p, x in self.incorrect_inputs.items():
            if not cfg.in_domain(tuple(x)):
                raise ValueError(f"incorrect input {x} of process {p} is outside [mu, U]^d")
        # round crash points must be reachable
        t_end = compute_t_end(cfg)
        for p, cp in self.crash_points.items():
            if cp.round is None:
                continue
            if cp.round > t_end:
                raise ValueError(f"crash point of process {p} is in round {cp.round} > t_end={t_end}")
            # round 0 has a single send: the stable vector submission
            limit = 1 if cp.round == 0 else cfg.n - 1
            if cp.round > 0 and cfg.n == 1:
                raise ValueError(f"process {p} sends no round {cp.round} messages when n=1")
            if cp.after_sends > limit:
                raise ValueError(
                    f"crash point of process {p} has after_sends={cp.after_sends} > {limit} in round {cp.round}"
                )


class Action(NamedTuple):
    kind: str
    proc: int
    peer: int = -1

    def key(self) -> tuple[int, int, int]:
        return (_ACTION_ORDER[self.kind], self.proc, self.peer)


_ACTION_ORDER = {"start": 0, "commit": 1, "sv_deliver": 2, "send": 3, "deliver": 4}


class Scheduler:
    """All scheduling nondeterminism of a run, driven by one seed"""

    def __init__(self, policy: SchedulerPolicy):
        self.policy = policy
        self.rng = np.random.default_rng(policy.seed)
        self.slow = frozenset(policy.slow_set) if policy.kind == SchedulerKind.SLOW_SET else frozenset()
        self._last_key: Optional[tuple[int, int, int]] = None

    def touches_slow(self, action: Action) -> bool:
        return action.proc in self.slow or action.peer in self.slow

    def choose(self, actions: list[Action], released: bool) -> Action:
        candidates = sorted(actions, key=Action.key)
        if self.slow and not released:
            fast = [a for a in candidates if not self.touches_slow(a)]
            # only fall back to slow actions when nothing else can move
            if fast:
                candidates = fast

        if self.policy.kind == SchedulerKind.ROUND_ROBIN:
            after = [a for a in candidates if self._last_key is None or a.key() > self._last_key]
            choice = (after or candidates)[0]
            self._last_key = choice.key()
            return choice
        return candidates[int(self.rng.integers(len(candidates)))]

    def prefix_length(self, lo: int, hi: int) -> int:
        if self.policy.kind == SchedulerKind.ROUND_ROBIN:
            return hi
        return int(self.rng.integers(lo, hi + 1))


def dumps_event(event: dict[str, Any]) -> str:
    return json.dumps(event, sort_keys=True, separators=(",", ":"))


@dataclass
class SimTrace:
    """Recorded execution: an ordered event log plus views derived from it"""

    events: list[dict[str, Any]]

    @cached_property
    def header(self) -> dict[str, Any]:
        if not self.events or self.events[0].get("type") != "header":
            raise TraceError("trace does not start with a header record")
        return self.events[0]

    @cached_property
    def config(self) -> Config:
        return Config.model_validate(self.header["config"])

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def t_end(self) -> int:
        return int(self.header["t_end"])

    @cached_property
    def plan(self) -> FaultPlan:
        return FaultPlan.model_validate(self.header["plan"])

    @cached_property
    def policy(self) -> SchedulerPolicy:
        return SchedulerPolicy.model_validate(self.header["policy"])

    @cached_property
    def inputs(self) -> dict[int, Point]:
        return {int(p): point_from_json(x) for p, x in self.header["inputs"].items()}

    @cached_property
    def effective_inputs(self) -> dict[int, Point]:
        return {int(p): point_from_json(x) for p, x in self.header["effective_inputs"].items()}

    @property
    def faulty(self) -> frozenset[int]:
        return frozenset(self.plan.faulty)

    @property
    def fault_free(self) -> list[int]:
        return [p for p in range(self.n) if p not in self.faulty]

    @cached_property
    def _index(self) -> dict[str, Any]:
        states: dict[tuple[int, int], ConvexPolytope] = {}
        senders: dict[tuple[int, int], list[int]] = {}
        delivered: dict[int, DeliveredSet] = {}
        submitted: dict[int, Point] = {}
        decisions: dict[int, ConvexPolytope] = {}
        crashed: set[int] = set()
        round_sends: Counter = Counter()

        try:
            for event in self.events[1:]:
                kind = event["type"]
                if kind == "state":
                    key = (event["proc"], event["round"])
                    states[key] = polytope_from_json(event["polytope"])
                    if "senders" in event:
                        senders[key] = list(event["senders"])
                elif kind == "sv_submit":
                    submitted[event["proc"]] = point_from_json(event["value"])
                    round_sends[(event["proc"], 0)] += 1
                elif kind == "sv_deliver":
                    tuples = tuple(
                        InputTuple(value=point_from_json(t["value"]), sender=t["sender"])
                        for t in event["tuples"]
                    )
                    delivered[event["proc"]] = DeliveredSet(owner=event["proc"], tuples=tuples)
                elif kind == "send":
                    round_sends[(event["src"], event["round"])] += 1
                elif kind == "crash":
                    crashed.add(event["proc"])
                elif kind == "decide":
                    decisions[event["proc"]] = polytope_from_json(event["polytope"])
        except (KeyError, TypeError, ValueError) as e:
            raise TraceError(f"malformed trace event: {e}") from e

        return {
            "states": states,
            "senders": senders,
            "delivered": delivered,
            "submitted": submitted,
            "decisions": decisions,
            "crashed": frozenset(crashed),
            "round_sends": round_sends,
        }

    @property
    def states(self) -> dict[tuple[int, int], ConvexPolytope]:
        return self._index["states"]

    def h(self, p: int, t: int) -> ConvexPolytope:
        try:
            return self.states[(p, t)]
        except KeyError:
            raise TraceError(f"no recorded h[{t}] for process {p}") from None

    def senders(self, p: int, t: int) -> list[int]:
        try:
            return self._index["senders"][(p, t)]
        except KeyError:
            raise TraceError(f"no recorded MSG[{t}] for process {p}") from None

    @property
    def delivered(self) -> dict[int, DeliveredSet]:
        return self._index["delivered"]

    @property
    def submitted(self) -> dict[int, Point]:
        return self._index["submitted"]

    @property
    def decisions(self) -> dict[int, ConvexPolytope]:
        return self._index["decisions"]

    @property
    def crashed(self) -> frozenset[int]:
        return self._index["crashed"]

    def round_sends(self, p: int, t: int) -> int:
        return self._index["round_sends"][(p, t)]

    def F_of_t(self, t: int) -> frozenset[int]:
        return derive_F_of_t(self, t)

    def correct_inputs(self) -> list[Point]:
        """Inputs that validity is measured against"""
        if self.config.mode == Mode.CORRECT_INPUTS:
            return [self.effective_inputs[p] for p in range(self.n)]
        return [self.effective_inputs[p] for p in self.fault_free]

    def dumps(self) -> str:
        return "".join(dumps_event(e) + "\n" for e in self.events)

    def to_jsonl(self, path: str | os.PathLike) -> None:
        data = self.dumps().encode("utf-8")
        if str(path).endswith(".gz"):
            # fixed mtime and name keep the archive byte-identical across runs
            with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
                gz.write(data)
        else:
            with open(path, "wb") as fh:
                fh.write(data)

    @classmethod
    def loads(cls, text: str) -> "SimTrace":
        events = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise TraceError(f"line {lineno}: {e}") from e
        trace = cls(events)
        trace.header  # fail early on a missing header
        return trace

    @classmethod
    def from_jsonl(cls, path: str | os.PathLike) -> "SimTrace":
        try:
            if str(path).endswith(".gz"):
                with gzip.open(path, "rt", encoding="utf-8") as fh:
                    return cls.loads(fh.read())
            with open(path, "r", encoding="utf-8") as fh:
                return cls.loads(fh.read())
        except (OSError, EOFError, UnicodeDecodeError) as e:
            raise TraceError(f"cannot read trace {path}: {e}") from e


def derive_F_of_t(trace: SimTrace, t: int) -> frozenset[int]:
    """Processes that crashed before sending any round t message"""
    return frozenset(p for p in trace.crashed if trace.round_sends(p, t) == 0)


class NetworkSimulator:
    def __init__(
        self,
        cfg: Config,
        inputs: dict[int, Point],
        plan: FaultPlan,
        policy: SchedulerPolicy,
    ):
        plan.validate_against(cfg)
        policy.validate_against(cfg)
        if sorted(inputs) != list(range(cfg.n)):
            raise ValueError(f"inputs must cover processes 0..{cfg.n - 1}, got {sorted(inputs)}")
        for p, x in inputs.items():
            if not cfg.in_domain(x):
                raise ValueError(f"input {x} of process {p} is outside [mu, U]^d")

        self.cfg = cfg
        self.plan = plan
        self.policy = policy
        self.t_end = compute_t_end(cfg)
        self.inputs = {p: tuple(x) for p, x in inputs.items()}
        self.effective = {
            p: make_point(plan.incorrect_inputs[p]) if p in plan.incorrect_inputs else x
            for p, x in self.inputs.items()
        }

        self.procs = {p: ProcessState(p, x, cfg, self.t_end) for p, x in self.effective.items()}
        self.sv = StableVector(cfg.n, cfg.f)
        self.scheduler = Scheduler(policy)
        self.started: set[int] = set()
        self.crashed: set[int] = set()
        # one FIFO outbox per (src, dst) channel
        self.outbox: dict[tuple[int, int], deque[RoundMessage]] = defaultdict(deque)
        self.sent_count: Counter = Counter()
        self.channels: dict[tuple[int, int], deque[RoundMessage]] = defaultdict(deque)
        self.events: list[dict[str, Any]] = []
        self.step = 0
        self.max_steps = 8 * cfg.n * cfg.n * (self.t_end + 2) + 1000

    def _emit(self, kind: str, **fields: Any) -> None:
        self.events.append({"type": kind, "seq": len(self.events), "step": self.step, **fields})

    def _emit_header(self) -> None:
        self.events.append({
            "type": "header",
            "seq": 0,
            "config": self.cfg.model_dump(mode="json"),
            "plan": self.plan.model_dump(mode="json"),
            "policy": self.policy.model_dump(mode="json"),
            "inputs": {str(p): point_to_json(x) for p, x in sorted(self.inputs.items())},
            "effective_inputs": {str(p): point_to_json(x) for p, x in sorted(self.effective.items())},
            "t_end": self.t_end,
        })

    def _alive(self) -> list[int]:
        return [p for p in range(self.cfg.n) if p not in self.crashed]

    def _all_decided(self, procs) -> bool:
        return all(self.procs[p].decided is not None for p in procs)

    def _fast_released(self) -> bool:
        return self._all_decided(p for p in self._alive() if p not in self.scheduler.slow)

    def _enabled(self) -> list[Action]:
        actions = []
        pending = set(self.sv.pending())
        for p in self._alive():
            if p not in self.started:
                actions.append(Action("start", p))
                continue
            if p in pending:
                actions.append(Action("commit", p))
            if self.procs[p].delivered is None and self.sv.can_deliver(p):
                actions.append(Action("sv_deliver", p))
            for dst in range(self.cfg.n):
                if dst != p and self.outbox[(p, dst)]:
                    actions.append(Action("send", p, dst))
        for (src, dst), queue in self.channels.items():
            if queue and dst not in self.crashed:
                actions.append(Action("deliver", dst, src))
        return actions

    def _crash(self, p: int) -> None:
        self.crashed.add(p)
        for (src, _), queue in self.outbox.items():
            if src == p:
                queue.clear()
        self.sv.drop(p)
        self._emit("crash", proc=p)
        logger.debug(f"💥 Process {p} crashed at step {self.step}")

    def _round_crash_due(self, p: int, round_: int) -> bool:
        cp = self.plan.crash_points.get(p)
        return (
            cp is not None
            and cp.round == round_
            and self.sent_count[(p, round_)] == cp.after_sends
        )

    def _apply_event_crashes(self) -> None:
        for p, cp in sorted(self.plan.crash_points.items()):
            if cp.at_event is not None and cp.at_event <= self.step and p not in self.crashed:
                self._crash(p)

    def _broadcast(self, p: int, msg: RoundMessage) -> None:
        self._emit("round_enter", proc=p, round=msg.round)
        for offset in range(1, self.cfg.n):
            self.outbox[(p, (p + offset) % self.cfg.n)].append(msg)

    def _fire_thresholds(self, p: int) -> None:
        state = self.procs[p]
        while state.threshold_ready():
            t = state.t
            nxt = state.on_threshold()
            self._emit(
                "state",
                proc=p,
                round=t,
                senders=state.used_senders(t),
                polytope=polytope_to_json(state.h),
            )
            if nxt is not None:
                self._broadcast(p, nxt)
            else:
                self._emit("decide", proc=p, t_end=self.t_end, polytope=polytope_to_json(state.decided))

    def _perform(self, action: Action) -> None:
        p = action.proc
        if action.kind == "start":
            if self._round_crash_due(p, 0):
                self._crash(p)
                return
            self.started.add(p)
            self.sv.submit(p, self.effective[p])
            self.sent_count[(p, 0)] += 1
            self._emit("sv_submit", proc=p, value=point_to_json(self.effective[p]))
            if self._round_crash_due(p, 0):
                self._crash(p)

        elif action.kind == "commit":
            self.sv.commit(p)
            self._emit("sv_commit", proc=p)

        elif action.kind == "sv_deliver":
            length = self.scheduler.prefix_length(self.sv.threshold, len(self.sv.commit_sequence))
            delivered = self.sv.deliver(p, length)
            self._emit(
                "sv_deliver",
                proc=p,
                tuples=[{"sender": t.sender, "value": point_to_json(t.value)} for t in delivered.tuples],
            )
            first = self.procs[p].on_delivered(delivered)
            self._emit("state", proc=p, round=0, polytope=polytope_to_json(self.procs[p].h))
            self._broadcast(p, first)
            self._fire_thresholds(p)

        elif action.kind == "send":
            dst = action.peer
            msg = self.outbox[(p, dst)][0]
            if self._round_crash_due(p, msg.round):
                self._crash(p)
                return
            self.outbox[(p, dst)].popleft()
            self.channels[(p, dst)].append(msg)
            self.sent_count[(p, msg.round)] += 1
            self._emit("send", src=p, dst=dst, round=msg.round)
            if self._round_crash_due(p, msg.round):
                self._crash(p)

        elif action.kind == "deliver":
            src, dst = action.peer, p
            msg = self.channels[(src, dst)].popleft()
            used = self.procs[dst].on_round_message(msg)
            self._emit("deliver", src=src, dst=dst, round=msg.round, status="used" if used else "late")
            self._fire_thresholds(dst)

    def run(self) -> SimTrace:
        logger.info(
            f"🚀 Simulating n={self.cfg.n} f={self.cfg.f} d={self.cfg.d} t_end={self.t_end} "
            f"scheduler={self.policy.kind.value} seed={self.policy.seed}"
        )
        self._emit_header()

        while True:
            self._apply_event_crashes()
            actions = self._enabled()
            if not actions:
                break
            if self._all_decided(self._alive()):
                # every live process decided: drain outboxes and channels in key order
                action = min(actions, key=Action.key)
            else:
                action = self.scheduler.choose(actions, released=self._fast_released())
            self._perform(action)
            self.step += 1
            if self.step > self.max_steps:
                raise SimulationError(f"run exceeded {self.max_steps} steps")

        if not self._all_decided(self._alive()):
            stuck = [p for p in self._alive() if self.procs[p].decided is None]
            raise SimulationError(f"no enabled actions but processes {stuck} have not decided")

        logger.info(
            f"✅ Run finished after {self.step} steps; crashed={sorted(self.crashed)}"
        )
        return SimTrace(self.events)


def run(
    cfg: Config,
    inputs: dict[int, Point],
    plan: Optional[FaultPlan] = None,
    policy: Optional[SchedulerPolicy] = None,
) -> SimTrace:
    return NetworkSimulator(cfg, inputs, plan or FaultPlan(), policy or SchedulerPolicy()).run()


def check_trace_structure(trace: SimTrace) -> list[str]:
    """Exactly-once FIFO delivery, no loss, the F[t] chain and MSG consistency"""
    violations: list[str] = []
    sends: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    deliveries: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    used: dict[tuple[int, int], set[int]] = defaultdict(set)

    for event in trace.events[1:]:
        if event["type"] == "send":
            sends[(event["src"], event["dst"])].append((event["round"], event["seq"]))
        elif event["type"] == "deliver":
            deliveries[(event["src"], event["dst"])].append((event["round"], event["seq"]))
            if event["status"] == "used":
                used[(event["dst"], event["round"])].add(event["src"])

    for channel in sorted(set(sends) | set(deliveries)):
        sent, got = sends[channel], deliveries[channel]
        if len(got) > len(sent):
            violations.append(f"channel {channel}: {len(got)} deliveries for {len(sent)} sends")
            continue
        for (s_round, s_seq), (d_round, d_seq) in zip(sent, got):
            if s_round != d_round:
                violations.append(f"channel {channel}: FIFO order broken (sent round {s_round}, got {d_round})")
                break
            if d_seq <= s_seq:
                violations.append(f"channel {channel}: delivery at {d_seq} precedes its send at {s_seq}")
                break
        if channel[1] not in trace.crashed and len(got) != len(sent):
            violations.append(f"channel {channel}: {len(sent) - len(got)} messages lost")

    for (p, t), senders in trace._index["senders"].items():
        if set(senders) != {p} | used[(p, t)]:
            violations.append(f"process {p} round {t}: MSG {senders} disagrees with deliveries")

    previous = frozenset()
    for t in range(trace.t_end + 2):
        current = trace.F_of_t(t)
        if not previous <= current or not current <= trace.faulty:
            violations.append(f"F[{t}]={sorted(current)} breaks F[t-1] ⊆ F[t] ⊆ F")
        previous = current

    for p in range(trace.n):
        if p not in trace.crashed and p not in trace.decisions:
            violations.append(f"live process {p} never decided")

    return violations
