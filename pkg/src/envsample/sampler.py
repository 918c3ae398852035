"""Perfect samplers: PSA (grand coupling), EPSA (envelopes) and Split.

All three read the same backward event sequence from a
:class:`BackwardEventStore`: the label at time ``-t`` is ``store[t]`` and a
horizon ``n`` uses ``store[n-1], ..., store[0]`` in that order.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .automaton import EventTable, Interval, ModelError, State, transition_table
from .zones import LP_EXACT, MODES, PiecewiseEvent

DEFAULT_CAP = 2**22
DEFAULT_STATE_CAP = 10**5
PSA = "psa"
EPSA = "epsa"
SPLIT = "split"
ALGORITHMS = (PSA, EPSA, SPLIT)


class NonCoalescenceError(RuntimeError):
    """The sampler reached its horizon cap without certifying coalescence."""

    def __init__(self, message: str, horizon: int, work: int = 0):
        super().__init__(message)
        self.horizon = horizon
        self.work = work


class StateCapError(RuntimeError):
    """Split found more states at its threshold than it may enumerate."""


class BackwardEventStore:
    """Lazily drawn i.i.d. event positions for times 0, -1, -2, ...

    Uniforms come from one ``numpy`` generator in order, so the label at a
    given time does not depend on how the buffer grew.
    """

    def __init__(self, table: EventTable, seed=None):
        if not table.events:
            raise ModelError("cannot sample from an empty event table")
        self.table = table
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._buf = np.empty(0, dtype=np.int64)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def ensure(self, n: int) -> np.ndarray:
        """Make sure times ``0 .. -(n-1)`` are drawn; return the buffer prefix."""
        if n > self._n:
            target = max(n, 2 * self._n, 64)
            fresh = self.table.draw_positions(self._rng.random(target - self._n))
            if target > self._buf.shape[0]:
                buf = np.empty(target, dtype=np.int64)
                buf[: self._n] = self._buf[: self._n]
                self._buf = buf
            self._buf[self._n : target] = fresh
            self._n = target
        return self._buf[:n]

    def __getitem__(self, t: int) -> int:
        if t < 0:
            raise IndexError("times are indexed by t >= 0 for time -t")
        return int(self.ensure(t + 1)[t])

    def label(self, t: int) -> str:
        return self.table.events[self[t]].label

    def word(self, n: int) -> list[str]:
        """Labels ``u_{-n+1}, ..., u_0`` in application order."""
        pos = self.ensure(n)
        return [self.table.events[int(p)].label for p in pos[::-1]]


@dataclass
class SampleResult:
    sample: State
    coupling_time: int
    work: int
    algorithm: str
    horizon: int = 0  # horizon of the final successful sweep
    search_work: int = 0  # extra applications spent locating the minimal horizon


# -- backends ----------------------------------------------------------------


class _Backend:
    """Envelope sweeps over a store, compiled when possible."""

    def __init__(self, table: EventTable, mode: str, backend: str):
        if mode not in MODES:
            raise ValueError(f"unknown envelope mode {mode!r}; expected one of {MODES}")
        self.table, self.mode = table, mode
        self.model = None
        if backend not in ("auto", "compiled", "python"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend != "python":
            try:
                self.model = compiled_model(table, mode)
            except kernels.NotCompilable:
                if backend == "compiled":
                    raise
        self.space = table.space
        if self.model is None:
            self._env = [_envelope_fn(ev.semantics, mode, table.space) for ev in table.events]

    @property
    def compiled(self) -> bool:
        return self.model is not None

    def sweep(self, labels: np.ndarray, n: int) -> Interval:
        if self.model is not None:
            d = self.space.d
            lo, hi = np.empty(d, np.int64), np.empty(d, np.int64)
            kernels.envelope_sweep(self.model, labels, n, lo, hi)
            return Interval(tuple(lo.tolist()), tuple(hi.tolist()))
        iv = self.space.full()
        for t in range(n - 1, -1, -1):
            iv = self._env[labels[t]](iv)
        return iv

    def split(self, labels: np.ndarray, n: int, threshold: int, state_cap: int):
        if self.model is not None:
            out = np.empty(self.space.d, np.int64)
            status, work = kernels.split_sweep(self.model, labels, n, threshold, state_cap, out)
            return int(status), tuple(out.tolist()), int(work)
        return _split_python(self, labels, n, threshold, state_cap)


def _envelope_fn(sem, mode: str, space) -> Callable[[Interval], Interval]:
    if isinstance(sem, PiecewiseEvent):
        return lambda iv: sem.envelope(iv, space, mode=mode)
    if not hasattr(sem, "envelope"):
        raise ModelError(f"{type(sem).__name__} events have no envelope; use PSA")
    return lambda iv: sem.envelope(iv, space)


def _split_python(be: _Backend, labels, n, threshold, state_cap):
    space, events = be.space, be.table.events
    iv, work, t = space.full(), 0, n - 1
    while t >= 0 and iv.width > threshold:
        iv = be._env[labels[t]](iv)
        work += 1
        t -= 1
    if iv.width > threshold:
        return 1, (), work
    if iv.cardinality > state_cap:
        return 2, (), work
    states = set(iv.states())
    while t >= 0:
        sem = events[labels[t]].semantics
        work += len(states)
        states = {sem.apply(x, space) for x in states}
        t -= 1
    if len(states) > 1:
        return 1, (), work
    return 0, next(iter(states)), work


def compiled_model(table: EventTable, mode: str = LP_EXACT) -> kernels.CompiledModel:
    """Compiled arrays for ``table`` (cached on the table until it changes)."""
    cache = table.__dict__.setdefault("_compiled", {})
    key = (mode, len(table.events))
    if key not in cache:
        try:
            cache[key] = kernels.compile_model(table, mode)
        except kernels.NotCompilable as exc:
            cache[key] = exc
    hit = cache[key]
    if isinstance(hit, Exception):
        raise hit
    return hit


def _transitions(table: EventTable) -> np.ndarray:
    cache = table.__dict__.setdefault("_compiled", {})
    key = ("T", len(table.events))
    if key not in cache:
        cache[key] = transition_table(table)
    return cache[key]


def _store(table: EventTable, store, seed) -> BackwardEventStore:
    if store is None:
        return BackwardEventStore(table, seed)
    if store.table is not table:
        raise ValueError("store was drawn for a different event table")
    return store


# -- samplers ----------------------------------------------------------------


def psa(
    table: EventTable,
    store: BackwardEventStore | None = None,
    *,
    seed=None,
    cap: int = DEFAULT_CAP,
) -> SampleResult:
    """Coupling from the past on the full trajectory map.

    ``S`` maps every state at time ``-n`` to its position at time 0; each
    step composes one more past event, ``S := S o T[u_{-n}]``.
    """
    store = _store(table, store, seed)
    T = _transitions(table)
    n_states = T.shape[1]
    S = np.arange(n_states, dtype=np.int64)
    scratch = np.empty_like(S)
    start, chunk = 0, 64
    while start < cap:
        stop = min(cap, start + chunk)
        labels = store.ensure(stop)
        tau = kernels.psa_compose(T, labels, start, stop, S, scratch)
        if tau > 0:
            sample = table.space.state(int(S[0]))
            return SampleResult(sample, tau, tau * n_states, PSA, horizon=tau)
        start, chunk = stop, chunk * 2
    raise NonCoalescenceError(
        f"grand coupling did not coalesce within {cap} events", cap, cap * n_states
    )


def _doubling(run: Callable[[int], tuple[bool, object, int]], cap: int, name: str, hint: str):
    """Doubling search for a certifying horizon, then bisection to the minimal one.

    ``run(n)`` returns ``(certified, sample, work)``.  Certification is
    monotone in ``n`` for every sampler here, so bisection is valid.
    """
    n, work = 1, 0
    while True:
        ok, sample, w = run(n)
        work += w
        if ok:
            break
        if n >= cap:
            raise NonCoalescenceError(
                f"{name} did not certify coalescence within horizon {cap}; {hint}", n, work
            )
        n = min(2 * n, cap)
    final, search = n, 0
    lo, hi = n // 2, n  # run(lo) failed (or lo = 0), run(hi) succeeded
    while hi - lo > 1:
        mid = (lo + hi) // 2
        ok, _, w = run(mid)
        search += w
        if ok:
            hi = mid
        else:
            lo = mid
    return sample, hi, work, final, search


def epsa(
    table: EventTable,
    store: BackwardEventStore | None = None,
    *,
    seed=None,
    mode: str = LP_EXACT,
    cap: int = DEFAULT_CAP,
    minimal: bool = True,
    backend: str = "auto",
) -> SampleResult:
    """Envelope CFTP.

    For ``n = 1, 2, 4, ...`` the interval ``[bottom, top]`` is swept through
    ``u_{-n+1}, ..., u_0``; the first singleton is the sample.  With
    ``minimal`` the reported coupling time is the least certifying horizon,
    located by bisection; its cost goes to ``search_work``.
    """
    store = _store(table, store, seed)
    be = _Backend(table, mode, backend)
    hint = "the envelopes may never couple for this model; try the split sampler"
    if be.compiled:
        sample, tau, work, final, search = _compiled_search(be, store, cap, minimal, False, 0, 0, "EPSA", hint)
        return SampleResult(sample, tau, work, EPSA, horizon=final, search_work=search)

    def run(n):
        iv = be.sweep(store.ensure(n), n)
        return iv.is_singleton, iv.lower, n

    if minimal:
        sample, tau, work, final, search = _doubling(run, cap, "EPSA", hint)
    else:
        sample, final, work, final, search = _doubling_only(run, cap, "EPSA", hint)
        tau = final
    return SampleResult(sample, tau, work, EPSA, horizon=final, search_work=search)


def _compiled_search(be, store, cap, minimal, split, threshold, state_cap, name, hint):
    out = np.empty(be.space.d, np.int64)
    start, total = 1, 0
    labels = store.ensure(64)
    while True:
        status, n, tau, work, search = kernels.doubling_search(
            be.model, labels, start, cap, minimal, split, threshold, state_cap, out
        )
        total += work
        if status == kernels.STATUS_NEED_LABELS:
            labels, start = store.ensure(n), n
            continue
        if status == kernels.STATUS_OK:
            return tuple(out.tolist()), int(tau), int(total), int(n), int(search)
        if status == kernels.STATUS_STATE_CAP:
            raise StateCapError(
                f"interval at width {threshold} holds more than {state_cap} states; "
                "raise the state cap or use LP-exact envelopes"
            )
        raise NonCoalescenceError(
            f"{name} did not certify coalescence within horizon {cap}; {hint}", int(n), int(total)
        )


def _doubling_only(run, cap, name, hint):
    n, work = 1, 0
    while True:
        ok, sample, w = run(n)
        work += w
        if ok:
            return sample, n, work, n, 0
        if n >= cap:
            raise NonCoalescenceError(
                f"{name} did not certify coalescence within horizon {cap}; {hint}", n, work
            )
        n = min(2 * n, cap)


def default_threshold(table: EventTable) -> int:
    """Largest ``||v||_inf`` over the table's ASHEs (zone events included), at least 1."""
    best = 1
    for ev in table.events:
        sem = ev.semantics
        ashes = [z.event for z in sem.zones] if isinstance(sem, PiecewiseEvent) else [sem]
        for a in ashes:
            v = getattr(a, "v", ())
            if v:
                best = max(best, max(abs(x) for x in v))
    return best


def split_sample(
    table: EventTable,
    store: BackwardEventStore | None = None,
    *,
    seed=None,
    threshold: int | None = None,
    state_cap: int = DEFAULT_STATE_CAP,
    mode: str = LP_EXACT,
    cap: int = DEFAULT_CAP,
    minimal: bool = True,
    backend: str = "auto",
) -> SampleResult:
    """Envelopes until the width is at most ``threshold``, then exact trajectories.

    Every trajectory alive at the switch lies in the interval, so following
    all of its states individually certifies coalescence exactly.
    """
    store = _store(table, store, seed)
    threshold = default_threshold(table) if threshold is None else int(threshold)
    if threshold < 1:
        raise ValueError("split threshold must be >= 1")
    be = _Backend(table, mode, backend)
    hint = "raise the cap or the split threshold"
    if be.compiled:
        sample, tau, work, final, search = _compiled_search(
            be, store, cap, minimal, True, threshold, state_cap, "Split", hint
        )
        return SampleResult(sample, tau, work, SPLIT, horizon=final, search_work=search)

    def run(n):
        status, sample, work = be.split(store.ensure(n), n, threshold, state_cap)
        if status == 2:
            raise StateCapError(
                f"interval at width {threshold} holds more than {state_cap} states; "
                "raise the state cap or use LP-exact envelopes"
            )
        return status == 0, sample, work

    if minimal:
        sample, tau, work, final, search = _doubling(run, cap, "Split", hint)
    else:
        sample, final, work, final, search = _doubling_only(run, cap, "Split", hint)
        tau = final
    return SampleResult(tuple(sample), tau, work, SPLIT, horizon=final, search_work=search)


SAMPLERS: dict[str, Callable[..., SampleResult]] = {PSA: psa, EPSA: epsa, SPLIT: split_sample}


def sample(table: EventTable, algorithm: str, store=None, **options) -> SampleResult:
    try:
        fn = SAMPLERS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}") from None
    if algorithm == PSA:
        options = {k: v for k, v in options.items() if k in ("seed", "cap")}
    return fn(table, store, **options)


# -- replications --------------------------------------------------------------


def run_seed(master: int, run_id: int) -> int:
    """Per-replication 64-bit seed derived from the master seed and a counter."""
    ss = np.random.SeedSequence(master, spawn_key=(run_id,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class RunRecord:
    run_id: int
    seed: int
    result: SampleResult | None
    censored: bool = False
    coupling_time: int = 0
    work: int = 0
    error: str = ""


@dataclass
class CouplingStats:
    algorithm: str
    n_runs: int
    mean: float
    variance: float
    ci_half_width: float
    censored: int
    histogram: dict[int, int]
    records: list[RunRecord] = field(repr=False, default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.coupling_time for r in self.records if not r.censored], dtype=np.int64)

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean - self.ci_half_width, self.mean + self.ci_half_width


def _one_run(args) -> RunRecord:
    table, algorithm, run_id, seed, options = args
    try:
        res = sample(table, algorithm, None, seed=seed, **options)
    except NonCoalescenceError as exc:
        return RunRecord(run_id, seed, None, True, exc.horizon, exc.work, str(exc))
    return RunRecord(run_id, seed, res, False, res.coupling_time, res.work)


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def run_replications(
    table: EventTable,
    algorithm: str,
    n_runs: int,
    seed: int,
    workers: int = 1,
    **options,
) -> list[RunRecord]:
    """``n_runs`` independent replications, returned in run-id order."""
    jobs = [(table, algorithm, i, run_seed(seed, i), options) for i in range(n_runs)]
    if workers <= 1 or n_runs < 2:
        return [_one_run(job) for job in jobs]
    chunk = max(1, n_runs // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one_run, jobs, chunksize=chunk))


def summarize(algorithm: str, records: Sequence[RunRecord]) -> CouplingStats:
    times = np.array([r.coupling_time for r in records if not r.censored], dtype=np.float64)
    censored = sum(r.censored for r in records)
    if censored:
        warnings.warn(
            f"{censored} of {len(records)} {algorithm} runs did not couple and are excluded",
            RuntimeWarning,
            stacklevel=2,
        )
    n = times.size
    mean = float(times.mean()) if n else math.nan
    var = float(times.var(ddof=1)) if n > 1 else 0.0
    half = 1.96 * math.sqrt(var / n) if n > 1 else 0.0
    values, counts = np.unique(times.astype(np.int64), return_counts=True)
    hist = {int(v): int(c) for v, c in zip(values, counts)}
    return CouplingStats(algorithm, len(records), mean, var, half, censored, hist, list(records))


def coupling_time_stats(
    algorithm: str,
    table: EventTable,
    n_runs: int,
    seed: int,
    workers: int = 1,
    **options,
) -> CouplingStats:
    """Mean, variance, normal 95% CI half-width and histogram of coupling times."""
    if n_runs < 2:
        raise ValueError("need at least 2 replications")
    records = run_replications(table, algorithm, n_runs, seed, workers, **options)
    return summarize(algorithm, records)
