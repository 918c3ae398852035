"""Piecewise events over polytopic zones.

A piecewise event acts as a different ASHE on each zone of a partition of
the state box.  Zones are cut out by hyperplanes ``a.x = c`` that contain
no integer point of the box; each zone is written as a sign pattern over
the hyperplanes (``-`` for ``a.x <= c``, ``+`` for ``a.x > c``, ``*`` for
either).

Envelopes are over-approximated zone by zone: bound the intersection of the
interval with the zone (exact rational LP, or a Minkowski test plus
precomputed coordinate bounds), push that box through the zone's ASHE, and
take the hull.  Zones are reached through a binary DAG of halfspace tests
so that whole groups of zones are skipped when the interval misses a side.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import lp
from .ashe import Ashe
from .automaton import Interval, ModelError, State, StateSpace
from .lp import CoordBounds, Polytope

LP_EXACT = "lp"
MINKOWSKI_FAST = "fast"
MODES = (LP_EXACT, MINKOWSKI_FAST)


class PartitionError(ModelError):
    """Zones overlap or leave a state uncovered."""


class HyperplaneError(ModelError):
    """A hyperplane passes through an integer point of the box."""


@dataclass(frozen=True)
class Hyperplane:
    """``a.x = c``; the negative side is ``a.x <= c``, the positive ``a.x > c``."""

    normal: tuple[Fraction, ...]
    offset: Fraction

    def __init__(self, normal: Sequence, offset):
        normal = tuple(Fraction(a) for a in normal)
        if not any(normal):
            raise ModelError("hyperplane normal must be nonzero")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", Fraction(offset))

    def value(self, x: Sequence) -> Fraction:
        return sum((a * xi for a, xi in zip(self.normal, x)), Fraction(0)) - self.offset

    def side(self, x: Sequence) -> str:
        return "-" if self.value(x) <= 0 else "+"

    def halfspace(self, sign: str) -> tuple[tuple[Fraction, ...], Fraction]:
        """Row ``(a, c)`` of ``a.x <= c`` for the closure of the given side."""
        if sign == "-":
            return self.normal, self.offset
        return tuple(-a for a in self.normal), -self.offset

    def integer_scaled(self) -> tuple[np.ndarray, int]:
        """Integer ``(a', c')`` with the same sides, ``a'.x <= c'`` exactly."""
        den = math.lcm(*(a.denominator for a in self.normal), self.offset.denominator)
        a = np.array([int(x * den) for x in self.normal], dtype=np.int64)
        return a, int(self.offset * den)


def _box_range(row: Sequence[Fraction], lo: Sequence, hi: Sequence) -> tuple[Fraction, Fraction]:
    """Min and max of ``row . x`` over the rational box."""
    mn = mx = Fraction(0)
    for a, l, h in zip(row, lo, hi):
        if a >= 0:
            mn += a * l
            mx += a * h
        else:
            mn += a * h
            mx += a * l
    return mn, mx


def normalize_rows(rows: Iterable[tuple[Sequence[Fraction], Fraction]], d: int) -> Polytope:
    """Polytope from halfspace rows, rounding single-variable rows to integers.

    A row ``a_i x_i <= c`` keeps the same integer points as
    ``x_i <= floor(c / a_i)`` (or ``x_i >= ceil(c / a_i)`` when ``a_i < 0``);
    the rounded row is used so LP bounds are not inflated by the epsilon.
    """
    A, b = [], []
    for a, c in rows:
        nz = [i for i, ai in enumerate(a) if ai != 0]
        if len(nz) == 1:
            i = nz[0]
            ai = a[i]
            unit = [Fraction(0)] * d
            if ai > 0:
                unit[i] = Fraction(1)
                A.append(unit)
                b.append(Fraction(math.floor(c / ai)))
            else:
                unit[i] = Fraction(-1)
                A.append(unit)
                b.append(Fraction(-math.ceil(c / ai)))
        else:
            A.append(list(a))
            b.append(c)
    return Polytope(A, b, d)


def _eliminate(rows: list[tuple[tuple[Fraction, ...], Fraction]], j: int) -> list:
    pos = [r for r in rows if r[0][j] > 0]
    neg = [r for r in rows if r[0][j] < 0]
    out = [r for r in rows if r[0][j] == 0]
    for pa, pc in pos:
        for na, nc in neg:
            f, g = -na[j], pa[j]
            a = tuple(f * x + g * y for x, y in zip(pa, na))
            out.append((a, f * pc + g * nc))
    seen, uniq = set(), []
    for a, c in out:
        if not any(a):
            continue
        scale = max(abs(x) for x in a)
        key = (tuple(x / scale for x in a), c / scale)
        if key not in seen:
            seen.add(key)
            uniq.append(key)
    return uniq


def projection_rows(
    poly: Polytope, capacities: Sequence[int], max_rows: int = 4096
) -> list[tuple[tuple[Fraction, ...], Fraction]]:
    """Halfspaces of the projections of ``P ∩ [0, C]`` along coordinate subsets.

    Offsetting the rows of ``P`` and the coordinate bounds by the half box
    only describes ``P ⊕ box`` completely in dimension 2.  In general the
    Minkowski sum also has facets whose normals vanish on a set ``J`` of
    coordinates; those are the facets of the projection of ``P`` that
    forgets ``J``.  They are generated here by Fourier-Motzkin elimination
    for ``1 <= |J| <= d - 2`` (``|J| = d - 1`` gives the coordinate bounds).
    Returns an empty list if the elimination grows past ``max_rows``.
    """
    d = poly.d
    base = list(zip(poly.A, poly.b))
    for i, c in enumerate(capacities):
        unit = tuple(Fraction(int(k == i)) for k in range(d))
        base.append((unit, Fraction(c)))
        base.append((tuple(-x for x in unit), Fraction(0)))
    out, total = [], 0
    for size in range(1, d - 1):
        for J in itertools.combinations(range(d), size):
            rows = base
            for j in J:
                rows = _eliminate(rows, j)
                total += len(rows)
                if total > max_rows:
                    return []
            out.extend(rows)
    return out


@dataclass
class Zone:
    """One cell of the partition: a sign pattern and the ASHE acting there."""

    signs: str
    event: Ashe
    name: str = ""
    polytope: Polytope | None = None
    bounds: CoordBounds | None = None
    extra_rows: list = field(default_factory=list)

    def prepare(self, capacities: Sequence[int]) -> None:
        self.bounds = lp.precompute_coord_bounds(self.polytope, capacities)
        self.extra_rows = projection_rows(self.polytope, capacities)

    def minkowski_rows(self) -> list[tuple[tuple[Fraction, ...], Fraction]]:
        return list(zip(self.polytope.A, self.polytope.b)) + self.extra_rows


@dataclass
class _Node:
    hyperplane: int = -1  # -1 for a leaf
    neg: int = -1
    pos: int = -1
    zone: int = -1


class ZoneGraph:
    """Binary DAG of halfspace tests whose leaves are zones.

    Nodes with the same remaining set of candidate zones at the same depth
    are shared.  Traversal marks are epoch stamped so a sweep never needs a
    reset pass; the marks are the only mutable state, so concurrent sweeps
    need their own graph copy.
    """

    def __init__(self, hyperplanes: list[Hyperplane], zones: list[Zone], space: StateSpace):
        self.hyperplanes = hyperplanes
        self.nodes: list[_Node] = []
        self._memo: dict = {}
        self._leaf_of: dict[int, int] = {}
        d = space.d
        box_hi = space.capacities
        box_lo = (0,) * d

        def feasible(zone: int, path: list[tuple]) -> bool:
            poly = zones[zone].polytope
            extra = normalize_rows(path, d) if path else Polytope.whole(d)
            return lp.is_feasible(poly.intersect(extra), box_lo, box_hi)

        def build(t: int, cands: frozenset[int], path: list[tuple]) -> int:
            if len(cands) == 1:
                (z,) = cands
                if z not in self._leaf_of:
                    self._leaf_of[z] = self._add(_Node(zone=z))
                return self._leaf_of[z]
            while t < len(hyperplanes):
                neg = frozenset(c for c in cands if zones[c].signs[t] in "-*")
                pos = frozenset(c for c in cands if zones[c].signs[t] in "+*")
                if neg == cands and pos == cands:
                    t += 1
                    continue
                hp = hyperplanes[t]
                neg_path = path + [hp.halfspace("-")]
                pos_path = path + [hp.halfspace("+")]
                neg = frozenset(c for c in neg if feasible(c, neg_path))
                pos = frozenset(c for c in pos if feasible(c, pos_path))
                if not neg:
                    cands, path, t = pos, pos_path, t + 1
                    continue
                if not pos:
                    cands, path, t = neg, neg_path, t + 1
                    continue
                key = (t, cands)
                if key in self._memo:
                    return self._memo[key]
                node_id = self._add(_Node(hyperplane=t))
                self._memo[key] = node_id
                self.nodes[node_id].neg = build(t + 1, neg, neg_path)
                self.nodes[node_id].pos = build(t + 1, pos, pos_path)
                return node_id
            if len(cands) == 1:
                return build(t, cands, path)
            names = sorted(zones[c].name or str(c) for c in cands)
            raise PartitionError(f"zones {names} share a cell of the arrangement (overlap)")

        self.root = build(0, frozenset(range(len(zones))), [])
        self._marks = [0] * len(self.nodes)
        self._epoch = 0
        del self._memo

    def _add(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_leaves(self) -> int:
        return len(self._leaf_of)

    def locate(self, x: Sequence[int]) -> int:
        node = self.nodes[self.root]
        while node.zone < 0:
            side = self.hyperplanes[node.hyperplane].side(x)
            node = self.nodes[node.neg if side == "-" else node.pos]
        return node.zone

    def sweep(self, lo: Sequence[int], hi: Sequence[int]) -> list[int]:
        """Zones reachable from the root without crossing a halfspace the box misses."""
        self._epoch += 1
        epoch, marks = self._epoch, self._marks
        out, stack = [], [self.root]
        marks[self.root] = epoch
        while stack:
            node = self.nodes[stack.pop()]
            if node.zone >= 0:
                out.append(node.zone)
                continue
            hp = self.hyperplanes[node.hyperplane]
            mn, mx = _box_range(hp.normal, lo, hi)
            # push pos first so the negative side is processed first
            for child, reachable in ((node.pos, mx > hp.offset), (node.neg, mn <= hp.offset)):
                if reachable and marks[child] != epoch:
                    marks[child] = epoch
                    stack.append(child)
        return out


class PiecewiseEvent:
    """Event equal to ``zones[k].event`` on zone ``k``.

    ``mode`` selects how zone intersections are bounded: ``"lp"`` solves the
    rational LP per coordinate, ``"fast"`` clamps against precomputed
    coordinate bounds after a Minkowski-sum emptiness test.
    """

    def __init__(
        self,
        space: StateSpace,
        hyperplanes: Sequence[Hyperplane],
        zones: Sequence[Zone],
        mode: str = LP_EXACT,
        validate: bool = True,
        name: str = "",
    ):
        if mode not in MODES:
            raise ModelError(f"unknown envelope mode {mode!r}; expected one of {MODES}")
        self.space = space
        self.mode = mode
        self.name = name
        self.hyperplanes = list(hyperplanes)
        H, d = len(self.hyperplanes), space.d
        for hp in self.hyperplanes:
            if len(hp.normal) != d:
                raise ModelError("hyperplane dimension does not match the space")
        kept, self.dropped = [], []
        for z in zones:
            if len(z.signs) != H or set(z.signs) - set("-+*"):
                raise ModelError(f"zone sign pattern {z.signs!r} must have {H} of '-', '+', '*'")
            if z.event.d != d:
                raise ModelError("zone event dimension does not match the space")
            rows = [hp.halfspace(s) for hp, s in zip(self.hyperplanes, z.signs) if s != "*"]
            z.polytope = normalize_rows(rows, d)
            if lp.is_feasible(z.polytope, (0,) * d, space.capacities):
                z.prepare(space.capacities)
                kept.append(z)
            else:
                self.dropped.append(z)
        if not kept:
            raise PartitionError("every zone is empty")
        self.zones: list[Zone] = kept
        if validate:
            self.check_hyperplanes()
        self.graph = ZoneGraph(self.hyperplanes, self.zones, space)
        if validate:
            self.check_partition()
            self.check_zone_count()

    @property
    def K(self) -> int:
        return len(self.zones)

    @property
    def H(self) -> int:
        return len(self.hyperplanes)

    def zone_count_bound(self) -> int:
        return sum(math.comb(self.H, i) for i in range(min(self.H, self.space.d) + 1))

    def check_zone_count(self) -> None:
        if self.K > self.zone_count_bound():
            raise PartitionError(
                f"{self.K} zones exceed the arrangement bound {self.zone_count_bound()}"
            )
        if self.graph.n_nodes > 2 * self.K:
            raise PartitionError(
                f"zone graph has {self.graph.n_nodes} nodes for {self.K} zones; "
                "declare the hyperplanes that isolate don't-care zones first"
            )

    def _check_states(self) -> np.ndarray:
        space = self.space
        if space.cardinality <= 10**5:
            return space.states_array()
        rng = np.random.default_rng(0)
        caps = np.array(space.capacities)
        return rng.integers(0, caps + 1, size=(10**4, space.d))

    def check_hyperplanes(self) -> None:
        pts = self._check_states() if self.space.cardinality > 10**6 else self.space.states_array()
        for n, hp in enumerate(self.hyperplanes):
            a, c = hp.integer_scaled()
            hit = pts @ a == c
            if hit.any():
                x = tuple(int(v) for v in pts[np.argmax(hit)])
                raise HyperplaneError(
                    f"hyperplane {n} passes through integer state {x}; shift it by a small epsilon"
                )

    def check_partition(self) -> None:
        pts = self._check_states()
        scaled = [hp.integer_scaled() for hp in self.hyperplanes]
        neg = np.stack([pts @ a <= c for a, c in scaled], axis=1) if scaled else np.zeros((len(pts), 0), bool)
        count = np.zeros(len(pts), dtype=np.int64)
        for z in self.zones:
            inside = np.ones(len(pts), dtype=bool)
            for t, s in enumerate(z.signs):
                if s == "-":
                    inside &= neg[:, t]
                elif s == "+":
                    inside &= ~neg[:, t]
            count += inside
        bad = np.flatnonzero(count != 1)
        if bad.size:
            x = tuple(int(v) for v in pts[bad[0]])
            kind = "uncovered" if count[bad[0]] == 0 else "covered by several zones"
            raise PartitionError(f"state {x} is {kind}")

    # -- pointwise ---------------------------------------------------------

    def locate_zone(self, x: Sequence[int]) -> int:
        return self.graph.locate(x)

    def apply(self, x: State, space: StateSpace | None = None) -> State:
        return self.zones[self.graph.locate(x)].event.apply(x, self.space)

    # -- envelopes ---------------------------------------------------------

    def minkowski_intersects(self, k: int, iv: Interval) -> bool:
        """Does ``[m, M]_Q`` meet zone ``k``'s polytope?  O(d h_k), no LP."""
        zone = self.zones[k]
        m, M = iv.lower, iv.upper
        half = [Fraction(b - a, 2) for a, b in zip(m, M)]
        center = [a + s for a, s in zip(m, half)]
        for row, bi in zone.minkowski_rows():
            lhs = sum((a * c for a, c in zip(row, center)), Fraction(0))
            slack = sum((abs(a) * s for a, s in zip(row, half)), Fraction(0))
            if lhs > bi + slack:
                return False
        lo, hi = zone.bounds.lo, zone.bounds.hi
        return all(l - s <= c <= h + s for l, h, c, s in zip(lo, hi, center, half))

    def zone_interval(self, k: int, iv: Interval, mode: str | None = None) -> Interval | None:
        """Interval containing ``[[ [m, M] ∩ Z^k ]]``, or ``None`` if provably empty."""
        mode = mode or self.mode
        zone = self.zones[k]
        if mode == LP_EXACT:
            box = lp.integer_box(zone.polytope, iv.lower, iv.upper)
            return None if box is None else Interval(*box)
        if not self.minkowski_intersects(k, iv):
            return None
        lo = tuple(max(a, b) for a, b in zip(iv.lower, zone.bounds.int_lo))
        hi = tuple(min(a, b) for a, b in zip(iv.upper, zone.bounds.int_hi))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return Interval(lo, hi)

    def envelope(self, iv: Interval, space: StateSpace | None = None, mode: str | None = None) -> Interval:
        """Hull over the zones met by ``iv`` of (zone box) pushed through the zone's ASHE."""
        return self._hull(self.graph.sweep(iv.lower, iv.upper), iv, mode)

    def naive_envelope(self, iv: Interval, mode: str | None = None) -> Interval:
        """Same hull, visiting every zone instead of sweeping the DAG."""
        return self._hull(range(self.K), iv, mode)

    def _hull(self, candidates: Iterable[int], iv: Interval, mode: str | None) -> Interval:
        lo = hi = None
        for k in candidates:
            box = self.zone_interval(k, iv, mode)
            if box is None:
                continue
            out = self.zones[k].event.envelope(box, self.space)
            if lo is None:
                lo, hi = list(out.lower), list(out.upper)
            else:
                lo = [min(a, b) for a, b in zip(lo, out.lower)]
                hi = [max(a, b) for a, b in zip(hi, out.upper)]
        if lo is None:
            raise AssertionError(f"interval {iv} meets no zone; the partition must cover the box")
        return Interval(tuple(lo), tuple(hi))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "H": self.H,
            "K": self.K,
            "nodes": self.graph.n_nodes,
            "dropped_zones": len(self.dropped),
            "zone_bound": self.zone_count_bound(),
        }


def locate_zone(ev: PiecewiseEvent, x: Sequence[int]) -> int:
    return ev.locate_zone(x)


def piecewise_apply(ev: PiecewiseEvent, x: Sequence[int]) -> State:
    return ev.apply(tuple(x))


def zone_interval(ev: PiecewiseEvent, k: int, iv: Interval, mode: str | None = None) -> Interval | None:
    return ev.zone_interval(k, iv, mode)


def minkowski_intersects(ev: PiecewiseEvent, k: int, iv: Interval) -> bool:
    return ev.minkowski_intersects(k, iv)


def piecewise_envelope(ev: PiecewiseEvent, iv: Interval, mode: str | None = None) -> Interval:
    return ev.envelope(iv, mode=mode)
