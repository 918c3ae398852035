from __future__ import annotations

import itertools
from fractions import Fraction as F

import numpy as np
import pytest

from envsample.lp import (
    Polytope,
    all_extremes,
    integer_bounds,
    integer_box,
    is_feasible,
    lp_extremes,
    precompute_coord_bounds,
)
from envsample.queueing import QueueSpec, jsw_event

STRICT = Polytope([[1, -1]], [F(-1, 2)])  # x1 < x2 on integers


def vertices(A, b, lo, hi):
    """Vertex enumeration of {Ax <= b} within a box in 2-D: the oracle."""
    rows = [(list(map(F, a)), F(c)) for a, c in zip(A, b)]
    for i in range(2):
        e = [F(int(k == i)) for k in range(2)]
        rows.append((e, F(hi[i])))
        rows.append(([-x for x in e], -F(lo[i])))
    pts = []
    for (a1, c1), (a2, c2) in itertools.combinations(rows, 2):
        det = a1[0] * a2[1] - a1[1] * a2[0]
        if det == 0:
            continue
        x = ((c1 * a2[1] - c2 * a1[1]) / det, (a1[0] * c2 - a2[0] * c1) / det)
        if all(r[0] * x[0] + r[1] * x[1] <= c for r, c in rows):
            pts.append(x)
    return pts


class TestLpExtremes:
    def test_sloped_halfspace(self):
        assert lp_extremes(STRICT, (0, 0), (3, 3), 1) == (F(1, 2), F(3))

    def test_empty_constraint_set_is_box(self):
        assert lp_extremes(Polytope([], [], d=2), (1, 2), (4, 5), 0) == (1, 4)

    def test_infeasible(self):
        assert lp_extremes(Polytope([[1, 0]], [-1]), (0, 0), (3, 3), 0) is None
        assert not is_feasible(Polytope([[1, 0]], [-1]), (0, 0), (3, 3))

    def test_degenerate_point_box(self):
        assert lp_extremes(STRICT, (1, 2), (1, 2), 0) == (1, 1)

    def test_rational_box(self):
        assert lp_extremes(STRICT, (F(1, 3), 0), (F(5, 2), 3), 0) == (F(1, 3), F(5, 2))

    def test_random_against_vertices(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            k = int(rng.integers(1, 4))
            A = [[int(v) for v in rng.integers(-3, 4, 2)] for _ in range(k)]
            b = [F(int(rng.integers(-6, 12)), int(rng.integers(1, 5))) for _ in range(k)]
            lo = [int(v) for v in rng.integers(0, 4, 2)]
            hi = [l + int(rng.integers(0, 4)) for l in lo]
            pts = vertices(A, b, lo, hi)
            got = all_extremes(Polytope(A, b), lo, hi)
            if not pts:
                assert got is None
                continue
            assert got is not None
            for i in range(2):
                assert got.lo[i] == min(p[i] for p in pts)
                assert got.hi[i] == max(p[i] for p in pts)


class TestIntegerBounds:
    def test_strict_order(self):
        assert integer_bounds(STRICT, (0, 0), (3, 3), 0) == (0, 2)
        assert integer_bounds(STRICT, (0, 0), (3, 3), 1) == (1, 3)

    def test_box_only(self):
        assert integer_bounds(Polytope([], [], d=2), (1, 2), (4, 5), 0) == (1, 4)

    def test_floor_of_fraction(self):
        assert integer_bounds(Polytope([[1, 0]], [F(2, 5)]), (0, 0), (3, 3), 0) == (0, 0)

    def test_integer_box_matches_enumeration(self):
        pts = [x for x in itertools.product(range(4), repeat=2) if x[0] < x[1]]
        lo = tuple(min(p[i] for p in pts) for i in range(2))
        hi = tuple(max(p[i] for p in pts) for i in range(2))
        assert integer_box(STRICT, (0, 0), (3, 3)) == (lo, hi)

    def test_empty_when_no_rational_point(self):
        assert integer_bounds(STRICT, (2, 0), (3, 1), 0) is None


class TestCoordBounds:
    def test_whole_box(self):
        cb = precompute_coord_bounds(Polytope([], [], d=2), (3, 3))
        assert cb.lo == (0, 0) and cb.hi == (3, 3)

    def test_strict_order(self):
        cb = precompute_coord_bounds(STRICT, (3, 3))
        assert cb.lo == (0, F(1, 2)) and cb.hi == (F(5, 2), 3)

    def test_jsw_zones_against_vertices(self):
        ev = jsw_event([QueueSpec(10), QueueSpec(10)])
        for zone in ev.zones:
            P = zone.polytope
            pts = vertices(P.A, P.b, (0, 0), (10, 10))
            for i in range(2):
                assert zone.bounds.lo[i] == min(p[i] for p in pts)
                assert zone.bounds.hi[i] == max(p[i] for p in pts)


def test_polytope_dimension_mismatch():
    with pytest.raises(ValueError):
        Polytope([[1, 0], [1]], [0, 0])
