"""State spaces, Markov automata and brute-force oracles.

A Markov automaton is a finite state space together with a finite set of
events, a probability distribution over the events and a deterministic
action of every event on the states.  Drawing events i.i.d. and applying
them generates the Markov chain; the transition matrix is recovered by
summing event probabilities over ``x . a = y``.

The oracles here (``image``, ``transition_matrix``, ``stationary_solve``)
enumerate the state space and are meant for tests and small experiments.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

State = tuple[int, ...]

DEFAULT_ORACLE_LIMIT = 10**6


class ModelError(ValueError):
    """Invalid model description (bad label, bad weight, bad dimensions)."""


class OracleLimitError(RuntimeError):
    """The brute-force oracle was asked to enumerate too many states."""


class ReducibleChainError(RuntimeError):
    """The induced chain has more than one closed communicating class."""

    def __init__(self, message: str, classes: list[list[State]]):
        super().__init__(message)
        self.classes = classes


@dataclass(frozen=True)
class StateSpace:
    """The box lattice ``[0, C_1] x ... x [0, C_d]`` of Z^d."""

    capacities: tuple[int, ...]
    oracle_limit: int = DEFAULT_ORACLE_LIMIT

    def __post_init__(self):
        caps = tuple(int(c) for c in self.capacities)
        if not caps:
            raise ModelError("state space needs at least one dimension")
        if any(c < 0 for c in caps):
            raise ModelError(f"capacities must be nonnegative, got {caps}")
        object.__setattr__(self, "capacities", caps)

    @property
    def d(self) -> int:
        return len(self.capacities)

    @property
    def cardinality(self) -> int:
        return math.prod(c + 1 for c in self.capacities)

    @property
    def bottom(self) -> State:
        return (0,) * self.d

    @property
    def top(self) -> State:
        return self.capacities

    @property
    def enumerable(self) -> bool:
        return self.cardinality <= self.oracle_limit

    def full(self) -> Interval:
        return Interval(self.bottom, self.top)

    def contains(self, x: Sequence[int]) -> bool:
        return len(x) == self.d and all(0 <= xi <= c for xi, c in zip(x, self.capacities))

    def check_enumerable(self, n: int | None = None) -> None:
        n = self.cardinality if n is None else n
        if n > self.oracle_limit:
            raise OracleLimitError(
                f"{n} states exceed the oracle limit {self.oracle_limit}"
            )

    def states(self) -> Iterator[State]:
        """All states in index order (last coordinate varies fastest)."""
        self.check_enumerable()
        return itertools.product(*(range(c + 1) for c in self.capacities))

    def index(self, x: Sequence[int]) -> int:
        i = 0
        for xi, c in zip(x, self.capacities):
            i = i * (c + 1) + xi
        return i

    def state(self, index: int) -> State:
        out = []
        for c in reversed(self.capacities):
            index, r = divmod(index, c + 1)
            out.append(r)
        return tuple(reversed(out))

    def states_array(self) -> np.ndarray:
        """``(cardinality, d)`` integer array of all states in index order."""
        self.check_enumerable()
        grids = np.indices([c + 1 for c in self.capacities]).reshape(self.d, -1)
        return np.ascontiguousarray(grids.T, dtype=np.int64)


@dataclass(frozen=True)
class Interval:
    """Lattice interval ``[lower, upper]`` for the product order."""

    lower: State
    upper: State

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lower)
        hi = tuple(int(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("interval endpoints have different dimensions")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> int:
        return sum(b - a for a, b in zip(self.lower, self.upper))

    @property
    def is_singleton(self) -> bool:
        return self.lower == self.upper

    @property
    def cardinality(self) -> int:
        return math.prod(b - a + 1 for a, b in zip(self.lower, self.upper))

    def __contains__(self, x) -> bool:
        return all(a <= xi <= b for a, xi, b in zip(self.lower, x, self.upper))

    def states(self) -> Iterator[State]:
        return itertools.product(*(range(a, b + 1) for a, b in zip(self.lower, self.upper)))

    def issubset(self, other: Interval) -> bool:
        return all(
            oa <= a and b <= ob
            for a, b, oa, ob in zip(self.lower, self.upper, other.lower, other.upper)
        )

    @classmethod
    def hull(cls, points: Iterable[Sequence[int]]) -> Interval:
        """Smallest interval containing ``points`` (must be nonempty)."""
        it = iter(points)
        try:
            first = tuple(next(it))
        except StopIteration:
            raise ValueError("hull of an empty set") from None
        lo, hi = list(first), list(first)
        for p in it:
            for i, v in enumerate(p):
                if v < lo[i]:
                    lo[i] = v
                elif v > hi[i]:
                    hi[i] = v
        return cls(tuple(lo), tuple(hi))

    def __repr__(self) -> str:
        return f"[{self.lower}, {self.upper}]"


class Semantics(Protocol):
    """What an event must provide to live in an :class:`EventTable`."""

    def apply(self, x: State, space: StateSpace) -> State: ...

    def envelope(self, iv: Interval, space: StateSpace) -> Interval: ...


@dataclass(frozen=True)
class Event:
    label: str
    weight: Fraction
    semantics: Semantics


def _as_fraction(value) -> Fraction:
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    return Fraction(value)


@dataclass
class EventTable:
    """A Markov automaton: labelled, weighted events acting on a space.

    Weights are rates; the drawing distribution is ``weight / total_rate``.
    The insertion order of the events fixes the cumulative sums used by
    :meth:`draw`, so seeds reproduce exactly.
    """

    space: StateSpace
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        self._index = {}
        events, self.events = self.events, []
        for ev in events:
            self.add(ev.label, ev.weight, ev.semantics)

    def add(self, label: str, weight, semantics: Semantics) -> EventTable:
        weight = _as_fraction(weight)
        if weight <= 0:
            raise ModelError(f"event {label!r} needs a positive weight, got {weight}")
        if label in self._index:
            raise ModelError(f"duplicate event label {label!r}")
        self._index[label] = len(self.events)
        self.events.append(Event(label, weight, semantics))
        self.__dict__.pop("_cum", None)
        self.__dict__.pop("_compiled", None)
        return self

    def __len__(self) -> int:
        return len(self.events)

    @property
    def labels(self) -> list[str]:
        return [ev.label for ev in self.events]

    @property
    def total_rate(self) -> Fraction:
        return sum((ev.weight for ev in self.events), Fraction(0))

    def probability(self, label: str) -> Fraction:
        return self.events[self.position(label)].weight / self.total_rate

    def position(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ModelError(f"unknown event label {label!r}") from None

    def semantics(self, label: str) -> Semantics:
        return self.events[self.position(label)].semantics

    @property
    def cumulative(self) -> np.ndarray:
        """Right edges of the cumulative drawing distribution (floats)."""
        if "_cum" not in self.__dict__:
            total = self.total_rate
            acc, edges = Fraction(0), []
            for ev in self.events:
                acc += ev.weight
                edges.append(float(acc / total))
            edges[-1] = 1.0
            self.__dict__["_cum"] = np.array(edges)
        return self.__dict__["_cum"]

    def draw_positions(self, uniforms: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to event positions (one variate each)."""
        pos = np.searchsorted(self.cumulative, uniforms, side="right")
        return np.minimum(pos, len(self.events) - 1).astype(np.int64)


def apply(table: EventTable, x: Sequence[int], label: str) -> State:
    """``x . a`` for the event called ``label``."""
    x = tuple(x)
    if not table.space.contains(x):
        raise ModelError(f"state {x} is outside the box {table.space.capacities}")
    out = table.semantics(label).apply(x, table.space)
    if not table.space.contains(out):
        raise AssertionError(f"event {label!r} maps {x} outside the space: {out}")
    return out


def apply_word(table: EventTable, x: Sequence[int], word: Iterable[str]) -> State:
    """Left-to-right action of a word of event labels."""
    x = tuple(x)
    for label in word:
        x = apply(table, x, label)
    return x


def draw_event(table: EventTable, rng: np.random.Generator) -> str:
    """Draw one label according to the table's distribution."""
    if not table.events:
        raise ModelError("cannot draw from an empty event table")
    return table.events[int(table.draw_positions(rng.random(1))[0])].label


def image(table: EventTable, states: Iterable[Sequence[int]], label: str) -> set[State]:
    """``{x . a : x in states}`` with set semantics."""
    states = list(states)
    table.space.check_enumerable(len(states))
    sem = table.semantics(label)
    return {sem.apply(tuple(x), table.space) for x in states}


def transition_table(table: EventTable) -> np.ndarray:
    """``T[e, i]`` is the index of ``state(i) . event_e``."""
    space = table.space
    states = list(space.states())
    out = np.empty((len(table.events), len(states)), dtype=np.int64)
    for e, ev in enumerate(table.events):
        apply_ = ev.semantics.apply
        out[e] = [space.index(apply_(x, space)) for x in states]
    return out


def transition_matrix(table: EventTable, T: np.ndarray | None = None) -> sparse.csr_matrix:
    """Sparse transition matrix ``P(x, y) = sum_{a : x.a = y} P_D(a)``."""
    if T is None:
        T = transition_table(table)
    n = T.shape[1]
    total = table.total_rate
    probs = np.array([float(ev.weight / total) for ev in table.events])
    rows = np.tile(np.arange(n), len(probs))
    vals = np.repeat(probs, n)
    return sparse.csr_matrix((vals, (rows, T.ravel())), shape=(n, n))


def _closed_classes(P: sparse.csr_matrix) -> tuple[list[np.ndarray], np.ndarray]:
    ncomp, labels = csgraph.connected_components(P, directed=True, connection="strong")
    # a class is closed iff no edge leaves it
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_classes = set(labels[coo.row[leaving]].tolist())
    closed = [np.flatnonzero(labels == c) for c in range(ncomp) if c not in open_classes]
    return closed, labels


def stationary_solve(table: EventTable, tol: float = 1e-12) -> np.ndarray:
    """Stationary distribution of the induced chain, in state-index order.

    The support graph is split into strongly connected components first.
    Exactly one closed class is required; transient states get mass 0.
    """
    space = table.space
    space.check_enumerable()
    P = transition_matrix(table)
    closed, _ = _closed_classes(P)
    if len(closed) != 1:
        classes = [[space.state(i) for i in c[:10]] for c in closed]
        raise ReducibleChainError(
            f"chain has {len(closed)} closed classes; first states of each: {classes}",
            classes,
        )
    keep = closed[0]
    sub = P[keep][:, keep]
    n = len(keep)
    A = (sub.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[n - 1] = 1.0
    if n <= 2000:
        pi_sub = np.linalg.solve(A.toarray(), rhs)
    else:
        pi_sub = spsolve(A.tocsc(), rhs)
    pi_sub = np.clip(pi_sub, 0.0, None)
    pi_sub /= pi_sub.sum()
    for _ in range(50):
        resid = np.abs(sub.T @ pi_sub - pi_sub).max()
        if resid <= tol:
            break
        pi_sub = sub.T @ pi_sub
        pi_sub /= pi_sub.sum()
    pi = np.zeros(space.cardinality)
    pi[keep] = pi_sub
    return pi


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def empirical_distribution(space: StateSpace, samples: Iterable[Sequence[int]]) -> np.ndarray:
    counts = np.zeros(space.cardinality)
    n = 0
    for x in samples:
        counts[space.index(x)] += 1
        n += 1
    return counts / max(n, 1)
