from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

from app.geometry import convex_hull
from app.protocol import (
    Config,
    DuplicateMessageError,
    Mode,
    ProcessState,
    ProtocolError,
    RoundMessage,
    compute_t_end,
    round0_decide_h0,
)
from app.stable_vector import DeliveredSet, InputTuple

F = Fraction


def seg(a, b):
    return convex_hull([(F(a),), (F(b),)], 1)


def delivered(owner, values):
    return DeliveredSet(owner=owner, tuples=tuple(InputTuple((F(v),), p) for p, v in enumerate(values)))


class TestConfig:
    def test_incorrect_inputs_resilience(self):
        with pytest.raises(ValidationError):
            Config(n=3, f=1, d=1)
        assert Config(n=4, f=1, d=1).quorum == 3

    def test_correct_inputs_resilience(self):
        assert Config(n=3, f=1, d=1, mode=Mode.CORRECT_INPUTS).min_processes == 3
        with pytest.raises(ValidationError):
            Config(n=2, f=1, mode=Mode.CORRECT_INPUTS)

    def test_rationals_from_strings_and_floats(self):
        cfg = Config(n=4, f=1, epsilon="1/100", U=0.5)
        assert cfg.epsilon == F(1, 100)
        assert cfg.U == F(1, 2)
        assert cfg.model_dump(mode="json")["epsilon"] == "1/100"

    @pytest.mark.parametrize("field, value", [("epsilon", 0), ("mu", 2), ("d", 3), ("f", -1)])
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ValidationError):
            Config(**{"n": 4, "f": 1, field: value})


class TestTEnd:
    def test_one_dimension(self):
        assert compute_t_end(Config(n=4, f=1, d=1, epsilon="1/100")) == 21

    def test_degenerate_domain(self):
        assert compute_t_end(Config(n=4, f=1, mu=0, U=0, epsilon="1/100")) == 1

    def test_two_dimensions(self):
        assert compute_t_end(Config(n=5, f=1, d=2, epsilon="1/10")) == 20

    @given(
        st.integers(1, 3).flatmap(lambda f: st.tuples(st.just(f), st.integers(3 * f + 1, 12))),
        st.fractions(min_value=F(1, 1000), max_value=2, max_denominator=1000),
        st.fractions(min_value=0, max_value=5, max_denominator=10),
    )
    def test_matches_brute_force(self, nf, epsilon, U):
        f, n = nf
        cfg = Config(n=n, f=f, d=1, epsilon=epsilon, U=U)
        t_end = compute_t_end(cfg)
        lhs = lambda t: (1 - F(1, n)) ** (2 * t) * n ** 2 * U ** 2
        assert lhs(t_end) < epsilon ** 2
        assert t_end == 1 or lhs(t_end - 1) >= epsilon ** 2


class TestRoundZero:
    def test_safe_area_with_incorrect_inputs(self):
        assert round0_decide_h0(delivered(0, [0, 1, 2, 3]), Config(n=4, f=1, U=3)) == seg(1, 2)

    def test_hull_with_correct_inputs(self):
        cfg = Config(n=4, f=1, U=3, mode=Mode.CORRECT_INPUTS)
        assert round0_decide_h0(delivered(0, [0, 1, 2, 3]), cfg) == seg(0, 3)

    def test_minimum_size_set_is_non_empty(self, cfg_1d):
        assert not round0_decide_h0(delivered(0, [0, 1, 1]), cfg_1d).is_empty

    def test_undersized_set(self, cfg_1d):
        with pytest.raises(ProtocolError):
            round0_decide_h0(delivered(0, [0, 1]), cfg_1d)


class TestProcessState:
    def make(self, cfg, pid=0, t_end=2):
        return ProcessState(pid, (F(0),), cfg, t_end)

    def test_input_outside_domain(self, cfg_1d):
        with pytest.raises(ProtocolError):
            ProcessState(0, (F(2),), cfg_1d, 3)

    def test_threshold_fires_on_n_minus_f_messages(self, cfg_1d):
        state = self.make(cfg_1d)
        own = state.on_delivered(delivered(0, [0, 0, 1]))
        assert own.round == 1 and own.payload == state.h
        assert state.on_round_message(RoundMessage(seg(0, 1), 1, 1))
        assert not state.threshold_ready()
        assert state.on_round_message(RoundMessage(seg(0, 1), 2, 1))
        assert state.threshold_ready()

        nxt = state.on_threshold()
        assert nxt.round == 2
        assert state.history[1] == seg(0, F(2, 3))

    def test_late_message_is_recorded_not_used(self, cfg_1d):
        state = self.make(cfg_1d)
        state.on_delivered(delivered(0, [0, 0, 0]))
        for sender in (1, 2):
            state.on_round_message(RoundMessage(seg(0, 1), sender, 1))
        state.on_threshold()
        late = RoundMessage(seg(0, 1), 3, 1)
        assert state.on_round_message(late) is False
        assert state.late == [late]
        assert state.used_senders(1) == [0, 1, 2]

    def test_future_round_is_buffered(self, cfg_1d):
        state = self.make(cfg_1d)
        state.on_delivered(delivered(0, [0, 0, 0]))
        assert state.on_round_message(RoundMessage(seg(0, 1), 1, 2))
        assert not state.threshold_ready()
        assert state.msgs[2][1].payload == seg(0, 1)

    def test_duplicate_message(self, cfg_1d):
        state = self.make(cfg_1d)
        state.on_delivered(delivered(0, [0, 0, 0]))
        state.on_round_message(RoundMessage(seg(0, 1), 1, 1))
        with pytest.raises(DuplicateMessageError):
            state.on_round_message(RoundMessage(seg(0, 1), 1, 1))

    def test_decides_at_t_end(self, cfg_1d):
        state = self.make(cfg_1d, t_end=1)
        state.on_delivered(delivered(0, [0, 0, 0]))
        for sender in (1, 2):
            state.on_round_message(RoundMessage(seg(0, 1), sender, 1))
        assert state.on_threshold() is None
        assert state.decided == state.h == seg(0, F(2, 3))

    def test_round_messages_start_at_one(self):
        with pytest.raises(ProtocolError):
            RoundMessage(seg(0, 1), 0, 0)
