"""Exact rational linear programming over box-clipped polytopes.

A two-phase tableau simplex on :class:`fractions.Fraction` entries with
Bland's rule.  The problems solved here are tiny (a handful of halfspaces
in a handful of dimensions), and exactness matters because the optima are
rounded to integers afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

Rational = Fraction


def _frac(x) -> Fraction:
    if isinstance(x, float):
        raise TypeError("use exact rationals (int, Fraction or 'p/q' strings), not floats")
    return Fraction(x)


@dataclass(frozen=True)
class Polytope:
    """``{x : A x <= b}``; always intersected with a box before solving.

    ``A`` has one row per halfspace.  ``h = 0`` is the whole space.
    """

    A: tuple[tuple[Fraction, ...], ...]
    b: tuple[Fraction, ...]
    d: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __init__(self, A: Sequence[Sequence], b: Sequence, d: int | None = None):
        rows = tuple(tuple(_frac(a) for a in row) for row in A)
        rhs = tuple(_frac(x) for x in b)
        if len(rows) != len(rhs):
            raise ValueError("A and b have different numbers of rows")
        if d is None:
            if not rows:
                raise ValueError("dimension needed for a polytope without halfspaces")
            d = len(rows[0])
        if any(len(r) != d for r in rows):
            raise ValueError("every row of A needs d entries")
        object.__setattr__(self, "A", rows)
        object.__setattr__(self, "b", rhs)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "_cache", {})

    @classmethod
    def whole(cls, d: int) -> Polytope:
        return cls((), (), d)

    @property
    def h(self) -> int:
        return len(self.A)

    def contains(self, x: Sequence) -> bool:
        return all(sum(a * xi for a, xi in zip(row, x)) <= bi for row, bi in zip(self.A, self.b))

    def intersect(self, other: Polytope) -> Polytope:
        return Polytope(self.A + other.A, self.b + other.b, self.d)


@dataclass(frozen=True)
class CoordBounds:
    """Per-coordinate rational extremes of a box-clipped polytope."""

    lo: tuple[Fraction, ...]
    hi: tuple[Fraction, ...]

    @property
    def int_lo(self) -> tuple[int, ...]:
        return tuple(math.ceil(x) for x in self.lo)

    @property
    def int_hi(self) -> tuple[int, ...]:
        return tuple(math.floor(x) for x in self.hi)


class _Tableau:
    """Feasible dictionary for ``max c.y  s.t.  G y <= g, y >= 0``."""

    def __init__(self, G: list[list[Fraction]], g: list[Fraction]):
        self.n = n = len(G[0]) if G else 0
        rows, basis, n_art = [], [], 0
        m = len(G)
        width = n + m
        art_rows = [r for r in range(m) if g[r] < 0]
        width += len(art_rows)
        for r in range(m):
            row = [Fraction(0)] * (width + 1)
            sign = -1 if g[r] < 0 else 1
            for j in range(n):
                row[j] = sign * G[r][j]
            row[n + r] = Fraction(sign)
            row[-1] = sign * g[r]
            if sign < 0:
                col = n + m + n_art
                row[col] = Fraction(1)
                basis.append(col)
                n_art += 1
            else:
                basis.append(n + r)
            rows.append(row)
        self.rows, self.basis = rows, basis
        self.n_real = n + m
        self.width = width
        self.feasible = self._phase_one() if n_art else True

    def _pivot(self, r: int, col: int) -> None:
        rows = self.rows
        prow = rows[r]
        pv = prow[col]
        if pv != 1:
            prow[:] = [x / pv for x in prow]
        for k, row in enumerate(rows):
            if k != r and row[col] != 0:
                f = row[col]
                row[:] = [x - f * y for x, y in zip(row, prow)]
        self.basis[r] = col

    def _optimize(self, cost: list[Fraction], allowed: int) -> bool:
        """Maximize ``cost . z`` over columns ``< allowed``; False if unbounded."""
        while True:
            # reduced costs c_j - c_B B^-1 A_j, with rows already in B^-1 form
            cb = [cost[b] for b in self.basis]
            enter = -1
            for j in range(allowed):
                if j in self.basis:
                    continue
                red = cost[j] - sum(cbk * row[j] for cbk, row in zip(cb, self.rows) if cbk)
                if red > 0:
                    enter = j
                    break
            if enter < 0:
                return True
            best, leave = None, -1
            for r, row in enumerate(self.rows):
                if row[enter] > 0:
                    ratio = row[-1] / row[enter]
                    if (
                        best is None
                        or ratio < best
                        or (ratio == best and self.basis[r] < self.basis[leave])
                    ):
                        best, leave = ratio, r
            if leave < 0:
                return False
            self._pivot(leave, enter)

    def _phase_one(self) -> bool:
        cost = [Fraction(0)] * self.width
        for j in range(self.n_real, self.width):
            cost[j] = Fraction(-1)
        self._optimize(cost, self.width)
        value = sum(cost[b] * row[-1] for b, row in zip(self.basis, self.rows))
        if value < 0:
            return False
        # drive zero-valued artificials out of the basis, dropping redundant rows
        r = 0
        while r < len(self.rows):
            if self.basis[r] >= self.n_real:
                row = self.rows[r]
                col = next((j for j in range(self.n_real) if row[j] != 0), -1)
                if col < 0:
                    del self.rows[r]
                    del self.basis[r]
                    continue
                self._pivot(r, col)
            r += 1
        for row in self.rows:
            del row[self.n_real : self.width]
        self.width = self.n_real
        return True

    def maximize(self, c: Sequence[Fraction]) -> Fraction:
        saved_rows = [row[:] for row in self.rows]
        saved_basis = self.basis[:]
        cost = list(c) + [Fraction(0)] * (self.width - len(c))
        if not self._optimize(cost, self.width):
            raise ArithmeticError("LP unbounded")
        value = sum(cost[b] * row[-1] for b, row in zip(self.basis, self.rows))
        self.rows, self.basis = saved_rows, saved_basis
        return value


def _box_problem(p: Polytope, lo: Sequence, hi: Sequence) -> _Tableau:
    # shift y = x - lo >= 0, add y <= hi - lo
    lo = [_frac(v) for v in lo]
    hi = [_frac(v) for v in hi]
    d = p.d
    G, g = [], []
    for row, bi in zip(p.A, p.b):
        G.append(list(row))
        g.append(bi - sum(a * l for a, l in zip(row, lo)))
    for i in range(d):
        unit = [Fraction(0)] * d
        unit[i] = Fraction(1)
        G.append(unit)
        g.append(hi[i] - lo[i])
    return _Tableau(G, g)


def lp_extremes(
    p: Polytope, box_lo: Sequence, box_hi: Sequence, coord: int
) -> tuple[Fraction, Fraction] | None:
    """Exact min and max of ``x[coord]`` over ``P ∩ [box_lo, box_hi]``.

    Returns ``None`` when the region is empty.
    """
    if not 0 <= coord < p.d:
        raise IndexError(f"coordinate {coord} out of range for d={p.d}")
    if any(_frac(a) > _frac(b) for a, b in zip(box_lo, box_hi)):
        return None
    tab = _box_problem(p, box_lo, box_hi)
    if not tab.feasible:
        return None
    unit = [Fraction(0)] * p.d
    unit[coord] = Fraction(1)
    hi = tab.maximize(unit)
    unit[coord] = Fraction(-1)
    lo = -tab.maximize(unit)
    shift = _frac(box_lo[coord])
    return lo + shift, hi + shift


def all_extremes(p: Polytope, box_lo: Sequence, box_hi: Sequence) -> CoordBounds | None:
    """:func:`lp_extremes` for every coordinate, sharing one phase-one solve."""
    if any(_frac(a) > _frac(b) for a, b in zip(box_lo, box_hi)):
        return None
    tab = _box_problem(p, box_lo, box_hi)
    if not tab.feasible:
        return None
    los, his = [], []
    for i in range(p.d):
        unit = [Fraction(0)] * p.d
        unit[i] = Fraction(1)
        his.append(tab.maximize(unit) + _frac(box_lo[i]))
        unit[i] = Fraction(-1)
        los.append(-tab.maximize(unit) + _frac(box_lo[i]))
    return CoordBounds(tuple(los), tuple(his))


def is_feasible(p: Polytope, box_lo: Sequence, box_hi: Sequence) -> bool:
    if any(_frac(a) > _frac(b) for a, b in zip(box_lo, box_hi)):
        return False
    return _box_problem(p, box_lo, box_hi).feasible


def integer_bounds(
    p: Polytope, box_lo: Sequence, box_hi: Sequence, coord: int
) -> tuple[int, int] | None:
    """``(ceil(min), floor(max))`` of ``x[coord]``, or ``None`` if empty."""
    ext = lp_extremes(p, box_lo, box_hi, coord)
    if ext is None:
        return None
    q, Q = math.ceil(ext[0]), math.floor(ext[1])
    return None if q > Q else (q, Q)


def integer_box(p: Polytope, box_lo: Sequence, box_hi: Sequence) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
    """Integer bounds on every coordinate, or ``None`` if any is empty."""
    ext = all_extremes(p, box_lo, box_hi)
    if ext is None:
        return None
    q, Q = ext.int_lo, ext.int_hi
    if any(a > b for a, b in zip(q, Q)):
        return None
    return q, Q


def precompute_coord_bounds(p: Polytope, capacities: Sequence[int]) -> CoordBounds:
    """Rational coordinate extremes of ``P`` clipped to ``[0, C]`` (cached)."""
    key = tuple(capacities)
    if key not in p._cache:
        ext = all_extremes(p, (0,) * p.d, key)
        if ext is None:
            raise ValueError("polytope does not meet the state-space box")
        p._cache[key] = ext
    return p._cache[key]
