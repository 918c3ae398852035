"""Almost space homogeneous events (ASHEs) and their exact envelopes.

An ASHE shifts every state by a fixed vector ``v``.  Where ``x + v`` leaves
the box, the offending coordinates are *critical*; a blocking relation ``R``
says which coordinates freeze when a given coordinate is critical.  All
other coordinates move and saturate at the box boundary.

Component indices are 0-based throughout the Python API.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .automaton import Interval, State, StateSpace


def _saturate(value: int, cap: int) -> int:
    return 0 if value < 0 else cap if value > cap else value


@dataclass(frozen=True)
class Ashe:
    """Direction vector ``v`` plus blocking relation ``R``.

    ``(i, j) in R`` means: when component ``i`` is critical, component ``j``
    keeps its current value.
    """

    v: tuple[int, ...]
    relation: frozenset[tuple[int, int]] = frozenset()
    _targets: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = tuple(int(x) for x in self.v)
        rel = frozenset((int(i), int(j)) for i, j in self.relation)
        d = len(v)
        for i, j in rel:
            if not (0 <= i < d and 0 <= j < d):
                raise ValueError(f"blocking pair {(i, j)} out of range for d={d}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "relation", rel)
        # per-source adjacency; targets with v_j = 0 are dropped since
        # freezing a coordinate that does not move is a no-op
        targets = [[] for _ in range(d)]
        for i, j in sorted(rel):
            if v[j] != 0:
                targets[i].append(j)
        object.__setattr__(self, "_targets", tuple(tuple(t) for t in targets))

    @property
    def d(self) -> int:
        return len(self.v)

    @property
    def active(self) -> frozenset[int]:
        return frozenset(i for i, vi in enumerate(self.v) if vi != 0)

    @property
    def is_monotone_form(self) -> bool:
        """True when ``R`` is empty, so the event is a monotone saturated shift."""
        return not self.relation

    def critical_set(self, x: State, space: StateSpace) -> frozenset[int]:
        C = space.capacities
        return frozenset(
            i for i, vi in enumerate(self.v) if vi and not 0 <= x[i] + vi <= C[i]
        )

    def blocked_set(self, x: State, space: StateSpace) -> frozenset[int]:
        crit = self.critical_set(x, space)
        return frozenset(j for i, j in self.relation if i in crit)

    def apply(self, x: State, space: StateSpace) -> State:
        C = space.capacities
        v = self.v
        blocked = set()
        for i, vi in enumerate(v):
            if vi and not 0 <= x[i] + vi <= C[i]:
                blocked.update(self._targets[i])
        return tuple(
            x[i] if (i in blocked or not v[i]) else _saturate(x[i] + v[i], C[i])
            for i in range(len(v))
        )

    def envelope(self, iv: Interval, space: StateSpace) -> Interval:
        """Exact ``[[ [m, M] . a ]]`` in O(d^2), by the five-way case split."""
        C = space.capacities
        v = self.v
        m, M = iv.lower, iv.upper
        if len(m) != len(v):
            raise ValueError("interval dimension does not match the event")
        cr_m = [bool(vi) and not 0 <= m[i] + vi <= C[i] for i, vi in enumerate(v)]
        cr_M = [bool(vi) and not 0 <= M[i] + vi <= C[i] for i, vi in enumerate(v)]

        # X: blocked somewhere in [m, M]; Y: blocked everywhere;
        # by_other: blocked somewhere by a component other than itself
        X, Y, by_other = set(), set(), set()
        for i in range(len(v)):
            if not (cr_m[i] or cr_M[i]):
                continue
            for j in self._targets[i]:
                X.add(j)
                if cr_m[i] and cr_M[i]:
                    Y.add(j)
                if i != j:
                    by_other.add(j)

        lo, hi = list(m), list(M)
        for j, vj in enumerate(v):
            if vj == 0 or j in Y:
                continue
            if j not in X:
                lo[j] = _saturate(m[j] + vj, C[j])
                hi[j] = _saturate(M[j] + vj, C[j])
            elif j in by_other:
                if vj < 0:
                    lo[j] = max(m[j] + vj, 0)
                else:
                    hi[j] = min(M[j] + vj, C[j])
            elif vj < 0:
                # only j blocks j, and m_j < -v_j <= M_j
                lo[j] = 0
                hi[j] = max(M[j] + vj, -vj - 1)
            else:
                lo[j] = min(m[j] + vj, C[j] - vj + 1)
                hi[j] = C[j]
        return Interval(tuple(lo), tuple(hi))


def critical_set(a: Ashe, x: State, space: StateSpace) -> frozenset[int]:
    return a.critical_set(x, space)


def blocked_set(a: Ashe, x: State, space: StateSpace) -> frozenset[int]:
    return a.blocked_set(x, space)


def ashe_apply(a: Ashe, x: State, space: StateSpace) -> State:
    return a.apply(tuple(x), space)


def ashe_envelope(a: Ashe, iv: Interval, space: StateSpace) -> Interval:
    return a.envelope(iv, space)


@dataclass
class ExpansionReport:
    """Which width bounds applied to one envelope step and whether they held."""

    width: int
    new_width: int
    straddles: bool
    general_bound: int | None = None  # width + ||v||_1 - 1, or width if nothing straddles
    general_ok: bool | None = None
    unblocked_ok: bool | None = None  # B(m) u B(M) empty
    self_blocking_bound: int | None = None
    self_blocking_ok: bool | None = None

    @property
    def ok(self) -> bool:
        return all(
            flag is not False for flag in (self.general_ok, self.unblocked_ok, self.self_blocking_ok)
        )


def expansion_bound_check(a: Ashe, iv: Interval, space: StateSpace) -> ExpansionReport:
    """Evaluate the envelope-width bounds that apply to ``(a, iv)``."""
    m, M = iv.lower, iv.upper
    out = a.envelope(iv, space)
    width, new_width = iv.width, out.width
    cr_m, cr_M = a.critical_set(m, space), a.critical_set(M, space)
    straddles = bool(cr_m ^ cr_M)
    rep = ExpansionReport(width, new_width, straddles)

    if any(a.v):
        norm_v = sum(abs(x) for x in a.v)
        rep.general_bound = width + norm_v - 1 if straddles else width
        rep.general_ok = new_width <= rep.general_bound

    if not (a.blocked_set(m, space) | a.blocked_set(M, space)):
        rep.unblocked_ok = new_width <= width

    if all(i == j for i, j in a.relation):
        auto = {i for i, _ in a.relation}
        bound = sum(
            max(M[i] - m[i], abs(a.v[i]) - 1) if i in auto else M[i] - m[i]
            for i in range(a.d)
        )
        rep.self_blocking_bound = bound
        rep.self_blocking_ok = new_width <= bound
    return rep


def brute_envelope(a: Ashe, iv: Interval, space: StateSpace) -> Interval:
    """Hull of the pointwise image of ``iv`` (enumeration oracle)."""
    return Interval.hull(a.apply(x, space) for x in iv.states())
