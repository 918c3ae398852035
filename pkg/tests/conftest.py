from __future__ import annotations

import itertools
from fractions import Fraction
from pathlib import Path

import pytest

from envsample.ashe import Ashe
from envsample.automaton import EventTable, Interval, StateSpace
from envsample.queueing import QueueSpec, RoutingSpec, build_jackson, negative_customer

MODELS = Path(__file__).resolve().parent.parent / "models"


def mm1(capacity: int, lam, mu=1) -> EventTable:
    table = EventTable(StateSpace((capacity,)))
    table.add("arrival", Fraction(lam), Ashe((1,)))
    table.add("departure", Fraction(mu), Ashe((-1,)))
    return table


def tandem() -> EventTable:
    """Two CL queues in tandem on [0,2]^2."""
    specs = [QueueSpec(2, Fraction(1), Fraction(1, 2)), QueueSpec(2, Fraction(3, 4), Fraction(1, 4))]
    return build_jackson(specs, RoutingSpec(((0, 1), (0, 0))))


def negative_pair(capacity: int = 3) -> EventTable:
    table = EventTable(StateSpace((capacity, capacity)))
    table.add("arrive1", Fraction(4, 5), Ashe((1, 0)))
    table.add("arrive2", Fraction(1, 2), Ashe((0, 1)))
    table.add("move12", Fraction(1, 2), Ashe((-1, 1), {(0, 1)}))
    table.add("kill2", Fraction(3, 10), negative_customer(2, 1, 2))
    table.add("leave1", Fraction(1, 5), Ashe((-1, 0)))
    table.add("leave2", Fraction(1), Ashe((0, -1)))
    return table


def batch_queue(capacity: int, lam, mix=((2, 1),), mu=1) -> EventTable:
    """Single queue with batch arrivals of the given sizes (rejected whole) and unit services."""
    table = EventTable(StateSpace((capacity,)))
    for size, share in mix:
        table.add(f"batch{size}", Fraction(lam) * Fraction(share), Ashe((size,), {(0, 0)}))
    table.add("serve", Fraction(mu), Ashe((-1,)))
    return table


def all_intervals(space: StateSpace):
    axes = [[(a, b) for a in range(c + 1) for b in range(a, c + 1)] for c in space.capacities]
    for combo in itertools.product(*axes):
        yield Interval(tuple(a for a, _ in combo), tuple(b for _, b in combo))


def hull(points) -> Interval | None:
    points = list(points)
    if not points:
        return None
    d = len(points[0])
    return Interval(
        tuple(min(p[i] for p in points) for i in range(d)),
        tuple(max(p[i] for p in points) for i in range(d)),
    )


@pytest.fixture
def models_dir():
    return MODELS
