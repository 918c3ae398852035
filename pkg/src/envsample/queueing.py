"""Queueing-network builders producing event tables of (piecewise) ASHEs.

Queues are numbered from 1; index 0 stands for the outside of the network
(exogenous arrivals come from 0, departures go to 0).  Blocking pairs that
involve the outside are dropped since the outside is never critical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .ashe import Ashe
from .automaton import EventTable, Interval, ModelError, State, StateSpace
from .zones import LP_EXACT, Hyperplane, PiecewiseEvent, Zone

CL = "CL"
RS = "RS"
POLICIES = (CL, RS)


def rational(x) -> Fraction:
    """Exact rational from an int, a Fraction, a ``"p/q"`` or decimal string, or a float."""
    if isinstance(x, float):
        # the decimal the user wrote, not the binary expansion
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class QueueSpec:
    capacity: int
    mu: Fraction = Fraction(1)
    lam: Fraction = Fraction(0)
    servers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mu", rational(self.mu))
        object.__setattr__(self, "lam", rational(self.lam))
        if self.capacity < 0:
            raise ModelError("queue capacity must be >= 0")
        if self.mu < 0 or self.lam < 0:
            raise ModelError("rates must be >= 0")
        if not 1 <= self.servers <= self.capacity + 1:
            raise ModelError(f"server count must be in [1, C + 1], got {self.servers}")


@dataclass(frozen=True)
class RoutingSpec:
    """Routing probabilities ``P[i-1][j-1]`` from queue i to queue j, with per-pair policy.

    The exit probability ``P_{i,0}`` is whatever the row leaves over.
    ``policy`` is either one of ``"CL"``/``"RS"`` or a mapping from 1-based
    pairs ``(i, j)`` to a policy (missing pairs use ``default``).
    """

    P: tuple[tuple[Fraction, ...], ...]
    policy: object = CL
    default: str = CL

    def __post_init__(self):
        P = tuple(tuple(rational(p) for p in row) for row in self.P)
        object.__setattr__(self, "P", P)
        for i, row in enumerate(P, start=1):
            if len(row) != len(P):
                raise ModelError("routing matrix must be square")
            if any(p < 0 for p in row):
                raise ModelError(f"negative routing probability in row {i}")
            if sum(row) > 1:
                raise ModelError(f"routing row {i} sums to {sum(row)} > 1")
        pols = [self.policy] if isinstance(self.policy, str) else list(dict(self.policy).values())
        if any(p not in POLICIES for p in pols + [self.default]):
            raise ModelError(f"blocking policy must be one of {POLICIES}")

    def exit(self, i: int) -> Fraction:
        return 1 - sum(self.P[i - 1])

    def policy_of(self, i: int, j: int) -> str:
        if isinstance(self.policy, str):
            return self.policy
        return dict(self.policy).get((i, j), self.default)


def _check_index(i: int, d: int, allow_outside: bool = True) -> None:
    lo = 0 if allow_outside else 1
    if not lo <= i <= d:
        raise ModelError(f"queue index {i} out of range [{lo}, {d}]")


def _ashe(d: int, shifts: dict[int, int], pairs: Iterable[tuple[int, int]]) -> Ashe:
    """ASHE from 1-based shifts and blocking pairs, dropping the outside (0)."""
    v = [0] * d
    for i, s in shifts.items():
        if i:
            v[i - 1] += s
    rel = {(i - 1, j - 1) for i, j in pairs if i and j}
    return Ashe(tuple(v), frozenset(rel))


def routing_ashe(d: int, i: int, j: int, policy: str = CL) -> Ashe:
    """``v = e_j - e_i``; CL blocks on an empty source, RS also on a full target."""
    _check_index(i, d)
    _check_index(j, d)
    if policy not in POLICIES:
        raise ModelError(f"blocking policy must be one of {POLICIES}")
    pairs = [(i, j)] if policy == CL else [(i, j), (j, i)]
    return _ashe(d, {j: 1, i: -1} if i != j else {}, pairs)


def fork_event(d: int, i: int, targets: Sequence[int], relation: Iterable[tuple[int, int]] | None = None) -> Ashe:
    """``v = -e_i + sum_t e_t``.

    Default relation: an empty source blocks every copy, and a full target
    makes all copies lost.  Any other 1-based relation can be passed.
    """
    _check_index(i, d)
    targets = list(targets)
    for t in targets:
        _check_index(t, d, allow_outside=False)
    if len(set(targets)) != len(targets) or i in targets:
        raise ModelError("fork indices must be distinct")
    if relation is None:
        relation = [(i, t) for t in targets] + [(s, t) for s in targets for t in targets if s != t]
    shifts = {t: 1 for t in targets}
    shifts[i] = -1
    return _ashe(d, shifts, relation)


def join_event(d: int, inputs: Sequence[int], k: int, policy: str = CL) -> Ashe:
    """``v = e_k - e_i - e_j`` for input buffers ``(i, j)``."""
    i, j = inputs
    for q in (i, j):
        _check_index(q, d, allow_outside=False)
    _check_index(k, d)
    if len({i, j, k}) != 3:
        raise ModelError("join indices must be distinct")
    pairs = [(i, k), (j, k), (i, j), (j, i)]
    if policy == RS:
        pairs += [(k, i), (k, j)]
    elif policy != CL:
        raise ModelError(f"blocking policy must be one of {POLICIES}")
    return _ashe(d, {k: 1, i: -1, j: -1}, pairs)


def negative_customer(d: int, i: int, j: int) -> Ashe:
    """Service at ``i`` kills a customer at ``j`` if there is one."""
    _check_index(i, d, allow_outside=False)
    _check_index(j, d, allow_outside=False)
    if i == j:
        raise ModelError("negative customer needs two distinct queues")
    return _ashe(d, {i: -1, j: -1}, [(i, j)])


def batch_event(d: int, i: int, j: int, K: int, L: int, policy: str = CL) -> Ashe:
    """``K`` customers leave ``i`` and ``L`` join ``j``; service needs all ``K``."""
    _check_index(i, d)
    _check_index(j, d)
    if K < 1 or L < 1:
        raise ModelError("batch sizes must be >= 1")
    if i == j:
        raise ModelError("batch source and target must differ")
    pairs = [(i, i), (i, j)]
    if policy == RS:
        pairs += [(j, i), (j, j)]
    elif policy != CL:
        raise ModelError(f"blocking policy must be one of {POLICIES}")
    return _ashe(d, {i: -K, j: L}, pairs)


def multiserver_events(
    space: StateSpace, i: int, j: int, n: int, mu=1, mode: str = LP_EXACT
) -> list[tuple[str, Fraction, PiecewiseEvent]]:
    """``n`` events of rate ``mu``; the k-th serves queue ``i`` only when ``x_i >= k``."""
    d = space.d
    _check_index(i, d, allow_outside=False)
    _check_index(j, d)
    if i == j:
        raise ModelError("service source and target must differ")
    C = space.capacities[i - 1]
    if not 1 <= n <= C + 1:
        raise ModelError(f"server count must be in [1, {C + 1}], got {n}")
    move = _ashe(d, {i: -1, j: 1}, [])
    still = Ashe((0,) * d)
    out = []
    for k in range(1, n + 1):
        normal = [0] * d
        normal[i - 1] = 1
        hp = Hyperplane(normal, Fraction(2 * k - 1, 2))
        zones = [Zone("-", still, "idle"), Zone("+", move, "busy")]
        ev = PiecewiseEvent(space, [hp], zones, mode=mode, name=f"server {k} of queue {i}")
        out.append((f"serve_{i}_{j}_{k}", rational(mu), ev))
    return out


def build_jackson(
    specs: Sequence[QueueSpec], routing: RoutingSpec | None = None, mode: str = LP_EXACT
) -> EventTable:
    """Event table of a finite Jackson network with CL/RS blocking.

    Labels are ``a_i_j``; multi-server queues use :func:`multiserver_events`
    per destination, with rate ``mu_i P_ij`` for each server event.
    """
    d = len(specs)
    if d == 0:
        raise ModelError("network needs at least one queue")
    if routing is None:
        routing = RoutingSpec(tuple((0,) * d for _ in range(d)))
    if len(routing.P) != d:
        raise ModelError("routing matrix size does not match the number of queues")
    space = StateSpace(tuple(s.capacity for s in specs))
    table = EventTable(space)
    for j, s in enumerate(specs, start=1):
        if s.lam > 0:
            table.add(f"a_0_{j}", s.lam, routing_ashe(d, 0, j, routing.policy_of(0, j)))
    for i, s in enumerate(specs, start=1):
        if s.mu == 0:
            continue
        for j in list(range(1, d + 1)) + [0]:
            p = routing.exit(i) if j == 0 else routing.P[i - 1][j - 1]
            if p == 0 or i == j:
                continue
            rate = s.mu * p
            if s.servers > 1:
                for label, _, ev in multiserver_events(space, i, j, s.servers, rate, mode):
                    table.add(label, rate, ev)
            else:
                table.add(f"a_{i}_{j}", rate, routing_ashe(d, i, j, routing.policy_of(i, j)))
    if not table.events:
        raise ModelError("network has zero total rate")
    return table


# -- JSW and index routing -------------------------------------------------------


def default_epsilon(*coefficients) -> Fraction:
    """``1 / (4 L)`` with ``L`` the lcm of the coefficient denominators."""
    L = math.lcm(*(rational(c).denominator for c in coefficients)) if coefficients else 1
    return Fraction(1, 4 * L)


def _jsw_geometry(d: int, q1: int, q2: int, specs: Sequence[QueueSpec], eps):
    """Hyperplanes (comparison, queue-1 full, queue-2 full) over a d-dim space."""
    s1, s2 = specs
    w1 = 1 / (s1.servers * s1.mu)
    w2 = 1 / (s2.servers * s2.mu)
    eps = default_epsilon(w1, w2) if eps is None else rational(eps)
    if eps <= 0:
        raise ModelError("epsilon must be positive")
    # (x2 + 1) w2 - (x1 + 1) w1 = eps
    normal = [Fraction(0)] * d
    normal[q1 - 1], normal[q2 - 1] = -w1, w2
    compare = Hyperplane(normal, eps + w1 - w2)
    fulls = []
    for q, s in ((q1, s1), (q2, s2)):
        n = [0] * d
        n[q - 1] = 1
        fulls.append(Hyperplane(n, s.capacity - 1 + eps))
    return [compare] + fulls, eps


def _jsw_zone_patterns():
    # signs over (compare, q1 full, q2 full); '+' on compare means queue 1 is preferred
    return [
        ("+-*", 1, "prefer 1"),
        ("-*-", 2, "prefer 2"),
        ("++-", 2, "1 full, overflow to 2"),
        ("--+", 1, "2 full, overflow to 1"),
        ("*++", 0, "both full, rejected"),
    ]


def jsw_event(
    specs: Sequence[QueueSpec], eps=None, mode: str = LP_EXACT, validate: bool = True
) -> PiecewiseEvent:
    """Arrival joining the queue with the shorter expected waiting time.

    The expected wait after joining queue q is ``(x_q + 1) / (n_q mu_q)``;
    ties (within ``eps``) go to queue 2, and a full preferred queue
    overflows to the other one.
    """
    if len(specs) != 2:
        raise ModelError("JSW routing is defined between two queues")
    space = StateSpace(tuple(s.capacity for s in specs))
    return jsw_routing_event(space, (1, 2), specs, eps, mode, validate)


def jsw_routing_event(
    space: StateSpace,
    queues: tuple[int, int],
    specs: Sequence[QueueSpec],
    eps=None,
    mode: str = LP_EXACT,
    validate: bool = True,
) -> PiecewiseEvent:
    """JSW arrival between queues ``queues = (q1, q2)`` of a larger network."""
    q1, q2 = queues
    d = space.d
    for q in queues:
        _check_index(q, d, allow_outside=False)
    if q1 == q2:
        raise ModelError("JSW needs two distinct queues")
    if tuple(s.capacity for s in specs) != (space.capacities[q1 - 1], space.capacities[q2 - 1]):
        raise ModelError("JSW queue capacities do not match the state space")
    hps, _ = _jsw_geometry(d, q1, q2, specs, eps)
    zones = [
        Zone(signs, _ashe(d, {(q1, q2)[target - 1]: 1} if target else {}, []), name)
        for signs, target, name in _jsw_zone_patterns()
    ]
    return PiecewiseEvent(space, hps, zones, mode=mode, validate=validate, name="jsw")


def _check_increasing(f: Callable, cap: int, i: int) -> None:
    prev = None
    for x in range(cap + 1):
        y = f(x)
        if prev is not None and not y > prev:
            raise ModelError(f"index function {i} is not strictly increasing at x={x}")
        prev = y


def _largest_below(f: Callable, y, lo: int, hi: int) -> int:
    """Largest ``x`` in ``[lo, hi]`` with ``f(x) <= y``, or ``lo - 1``."""
    if f(lo) > y:
        return lo - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if f(mid) <= y:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _smallest_above(f: Callable, y, lo: int, hi: int) -> int:
    """Smallest ``x`` in ``[lo, hi]`` with ``f(x) >= y``, or ``hi + 1``."""
    if f(hi) < y:
        return hi + 1
    while lo < hi:
        mid = (lo + hi) // 2
        if f(mid) >= y:
            hi = mid
        else:
            lo = mid + 1
    return lo


def index_routing_interval(
    f: Sequence[Callable], k: int, iv: Interval, capacities: Sequence[int] | None = None
) -> Interval | None:
    """Exact hull of ``[m, M] ∩ {x : f_k(x_k) <= f_i(x_i) for all i}`` (``k`` 1-based).

    Inverses are found by bisection over the integers.  ``None`` when empty.
    """
    d = len(iv.lower)
    if len(f) != d:
        raise ModelError("need one index function per queue")
    _check_index(k, d, allow_outside=False)
    caps = iv.upper if capacities is None else capacities
    for i, (fi, c) in enumerate(zip(f, caps), start=1):
        _check_increasing(fi, c, i)
    m, M = iv.lower, iv.upper
    kk = k - 1
    fk = f[kk]
    top = min(fi(Mi) for fi, Mi in zip(f, M))
    hi_k = _largest_below(fk, top, m[kk], M[kk])
    if hi_k < m[kk]:
        return None
    lo, hi = list(m), list(M)
    hi[kk] = hi_k
    floor_val = fk(m[kk])
    for i in range(d):
        if i == kk:
            continue
        lo[i] = _smallest_above(f[i], floor_val, m[i], M[i])
        if lo[i] > M[i]:
            return None
    return Interval(tuple(lo), tuple(hi))


@dataclass
class IndexRoutingEvent:
    """After service at ``source``, the customer joins ``argmin_q f_q(x_q)``.

    Zones are the (non-polytopic) preimages of the argmin; their hulls with
    an interval come from :func:`index_routing_interval`.
    """

    source: int
    f: Sequence[Callable]
    policy: str = CL
    _ashes: list[Ashe] = field(init=False, repr=False)

    def __post_init__(self):
        d = len(self.f)
        self._ashes = [routing_ashe(d, self.source, k, self.policy) for k in range(1, d + 1)]

    def target(self, x: State) -> int:
        vals = [fi(xi) for fi, xi in zip(self.f, x)]
        return min(range(len(vals)), key=vals.__getitem__) + 1

    def apply(self, x: State, space: StateSpace) -> State:
        return self._ashes[self.target(x) - 1].apply(x, space)

    def envelope(self, iv: Interval, space: StateSpace) -> Interval:
        lo = hi = None
        for k in range(1, len(self.f) + 1):
            box = index_routing_interval(self.f, k, iv, space.capacities)
            if box is None:
                continue
            out = self._ashes[k - 1].envelope(box, space)
            lo = out.lower if lo is None else tuple(map(min, lo, out.lower))
            hi = out.upper if hi is None else tuple(map(max, hi, out.upper))
        return Interval(lo, hi)


# -- comparison network --------------------------------------------------------------


def comparison_load_difference(x: Sequence[int]) -> int:
    """Customers in the random-routing subsystem minus those in the JSW subsystem."""
    return (x[2] + x[3]) - (x[0] + x[1])


def build_comparison_network(
    mu1, mu2, lam, C: int | Sequence[int], eps=None, mode: str = LP_EXACT
) -> EventTable:
    """JSW versus random routing, run side by side on coupled arrivals and services.

    State ``(x1, x2, y1, y2)``: ``x`` is the JSW subsystem, ``y`` the random
    one.  Random routing is two events with weights ``lam p`` and
    ``lam (1 - p)``, ``p = sqrt(mu1) / (sqrt(mu1) + sqrt(mu2))``.  An arrival
    is rejected by both subsystems whenever either would lose its copy.
    Services of rate ``mu_q`` decrement queue ``q`` in both subsystems where
    it is nonempty.
    """
    mu1, mu2, lam = rational(mu1), rational(mu2), rational(lam)
    if min(mu1, mu2, lam) <= 0:
        raise ModelError("comparison network needs positive rates")
    caps = (C, C) if isinstance(C, int) else tuple(C)
    if len(caps) != 2:
        raise ModelError("capacity must be one integer or one per queue")
    space = StateSpace(caps + caps)
    specs = [QueueSpec(caps[0], mu1), QueueSpec(caps[1], mu2)]
    jsw_hps, eps = _jsw_geometry(4, 1, 2, specs, eps)
    # sqrt(mu) is rarely rational, so p is rounded to a fine rational
    r1, r2 = math.sqrt(mu1), math.sqrt(mu2)
    p = Fraction(r1 / (r1 + r2)).limit_denominator(10**6)
    table = EventTable(space)
    for q, weight in ((1, lam * p), (2, lam * (1 - p))):
        n = [0] * 4
        n[2 + q - 1] = 1
        y_full = Hyperplane(n, caps[q - 1] - 1 + eps)
        # the fullness test goes first so the rejection zone is a single leaf
        zones = [Zone("+***", Ashe((0, 0, 0, 0)), f"random queue {q} full, rejected")]
        for signs, target, name in _jsw_zone_patterns():
            shifts = {2 + q: 1}
            if target:
                shifts[target] = 1
                ev = _ashe(4, shifts, [])
            else:
                ev = Ashe((0, 0, 0, 0))
            zones.append(Zone("-" + signs, ev, name))
        pw = PiecewiseEvent(space, [y_full] + jsw_hps, zones, mode=mode, name=f"arrival, random to {q}")
        if weight > 0:
            table.add(f"arrival_rand{q}", weight, pw)
    table.add("service1", mu1, _ashe(4, {1: -1, 3: -1}, []))
    table.add("service2", mu2, _ashe(4, {2: -1, 4: -1}, []))
    return table
