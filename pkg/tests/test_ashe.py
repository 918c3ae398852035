from __future__ import annotations

import itertools

import numpy as np
import pytest

from envsample.ashe import (
    Ashe,
    ashe_apply,
    ashe_envelope,
    blocked_set,
    brute_envelope,
    critical_set,
    expansion_bound_check,
)
from envsample.automaton import Interval, StateSpace

from conftest import all_intervals

C10 = StateSpace((10, 10, 10))
FORK = Ashe((-1, 1, 1), {(0, 1), (0, 2), (1, 2), (2, 1)})


@pytest.mark.parametrize(
    "x, crit",
    [((0, 2, 4), {0}), ((3, 10, 4), {1}), ((0, 10, 10), {0, 1, 2})],
)
def test_critical_set(x, crit):
    assert critical_set(FORK, x, C10) == crit


def test_blocked_set_when_source_empty():
    assert blocked_set(FORK, (0, 2, 4), C10) == {1, 2}


def test_blocked_set_when_target_full():
    assert blocked_set(FORK, (3, 10, 4), C10) == {2}


def test_empty_relation_blocks_nothing():
    a = Ashe((-1, 1, 1))
    for x in [(0, 0, 0), (0, 10, 10), (5, 5, 5)]:
        assert blocked_set(a, x, C10) == set()


class TestApply:
    def test_interior(self):
        assert ashe_apply(FORK, (3, 2, 4), C10) == (2, 3, 5)

    def test_duplicates_lost_when_one_target_full(self):
        assert ashe_apply(FORK, (3, 10, 4), C10) == (2, 10, 4)

    def test_negative_customer_with_empty_target(self):
        kill = Ashe((-1, -1), {(0, 1)})
        assert ashe_apply(kill, (2, 0), StateSpace((5, 5))) == (1, 0)

    def test_zero_vector_is_identity(self):
        a = Ashe((0, 0))
        space = StateSpace((3, 3))
        assert all(ashe_apply(a, x, space) == x for x in space.states())

    def test_bad_relation_index(self):
        with pytest.raises(ValueError):
            Ashe((1, 0), {(0, 2)})


class TestEnvelope:
    def test_self_blocking_batch_departure(self):
        a = Ashe((-2,), {(0, 0)})
        got = ashe_envelope(a, Interval((0,), (5,)), StateSpace((20,)))
        assert got == Interval((0,), (3,))

    def test_monotone_case_is_endpoint_images(self):
        a = Ashe((-3,))
        got = ashe_envelope(a, Interval((2,), (5,)), StateSpace((20,)))
        assert got == Interval((0,), (2,))

    def test_two_dimensional_blocked_target(self):
        a = Ashe((-1, 1), {(0, 1)})
        got = ashe_envelope(a, Interval((0, 3), (2, 5)), StateSpace((5, 5)))
        assert got == Interval((0, 3), (1, 5))

    @pytest.mark.parametrize(
        "v, rel",
        [
            ((-1, 1, 1), {(0, 1), (0, 2), (1, 2), (2, 1)}),
            ((-1, -1, 1), {(0, 2), (1, 2), (0, 1), (1, 0)}),
            ((2, -1, 0), {(0, 0), (1, 0)}),
            ((-2, 3, -1), set()),
        ],
    )
    def test_exhaustive_on_small_box(self, v, rel):
        a = Ashe(v, rel)
        space = StateSpace((2, 3, 2))
        for iv in all_intervals(space):
            assert ashe_envelope(a, iv, space) == brute_envelope(a, iv, space)

    def test_envelope_of_singleton_is_image(self):
        space = StateSpace((4, 4, 4))
        for x in itertools.islice(space.states(), 0, None, 7):
            iv = Interval(x, x)
            y = ashe_apply(FORK, x, space)
            assert ashe_envelope(FORK, iv, space) == Interval(y, y)


class TestExpansion:
    def test_unblocked_never_grows(self):
        rng = np.random.default_rng(3)
        space = StateSpace((6, 6))
        for _ in range(300):
            a = Ashe(tuple(int(x) for x in rng.integers(-3, 4, 2)))
            lo = rng.integers(0, 7, 2)
            hi = [int(rng.integers(l, 7)) for l in lo]
            rep = expansion_bound_check(a, Interval(tuple(int(x) for x in lo), tuple(hi)), space)
            assert rep.new_width <= rep.width

    def test_unit_self_blocking_is_nonexpansive(self):
        a = Ashe((-1, 1), {(0, 0), (1, 1)})
        space = StateSpace((5, 5))
        for iv in all_intervals(space):
            rep = expansion_bound_check(a, iv, space)
            assert rep.new_width <= rep.width and rep.ok

    def test_batch_departure_report(self):
        rep = expansion_bound_check(Ashe((-2,), {(0, 0)}), Interval((0,), (5,)), StateSpace((20,)))
        assert rep.width == 5 and rep.new_width == 3
        assert rep.self_blocking_bound == 5 and rep.ok

    def test_tight_straddling_case(self):
        # width 0 interval is never straddling; width 1 straddling the boundary hits ||v|| - 1
        a = Ashe((-3,), {(0, 0)})
        rep = expansion_bound_check(a, Interval((2,), (3,)), StateSpace((10,)))
        assert rep.new_width == 2 == abs(a.v[0]) - 1
        assert rep.ok
