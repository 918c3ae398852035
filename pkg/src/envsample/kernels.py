"""Compiled (numba) inner loops for the samplers.

An :class:`~envsample.automaton.EventTable` whose events are all
:class:`~envsample.ashe.Ashe` or :class:`~envsample.zones.PiecewiseEvent`
is flattened into a tuple of integer arrays (:func:`compile_model`).  Every
rational row is scaled to integers, so the compiled envelopes give exactly
the same intervals as the Python implementation:

* the Minkowski test ``a.c <= b + |a|.s/2`` becomes
  ``a'.(m + M) <= 2 b' + |a'|.(M - m)``;
* the coordinate-bound part reduces to ``M_i >= ceil(l_i)`` and
  ``m_i <= floor(L_i)``;
* in LP mode a zone made of coordinate rows plus at most one sloped row has
  a closed-form LP over a box.  Zones with more sloped rows are not
  compiled; the sampler then falls back to the Python backend.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from numba import njit

from .ashe import Ashe
from .automaton import EventTable
from .zones import LP_EXACT, MODES, PiecewiseEvent

KIND_ASHE = 0
KIND_PIECEWISE = 1


class NotCompilable(TypeError):
    """The table holds events the compiled backend cannot evaluate exactly."""


class CompiledModel(NamedTuple):
    caps: np.ndarray
    ev_kind: np.ndarray
    ev_ref: np.ndarray
    av: np.ndarray
    ablk: np.ndarray
    pw_root: np.ndarray
    node_hp: np.ndarray
    node_neg: np.ndarray
    node_pos: np.ndarray
    node_zone: np.ndarray
    hp_a: np.ndarray
    hp_c: np.ndarray
    zone_ashe: np.ndarray
    zone_ilo: np.ndarray
    zone_ihi: np.ndarray
    mk_start: np.ndarray
    mk_a: np.ndarray
    mk_c: np.ndarray
    ax_lo: np.ndarray
    ax_hi: np.ndarray
    lp_start: np.ndarray
    lp_a: np.ndarray
    lp_c: np.ndarray
    fast: np.int64


def _scaled(row, c) -> tuple[list[int], int]:
    den = math.lcm(*(Fraction(a).denominator for a in row), Fraction(c).denominator)
    return [int(Fraction(a) * den) for a in row], int(Fraction(c) * den)


def compile_model(table: EventTable, mode: str = LP_EXACT) -> CompiledModel:
    """Flatten ``table`` into arrays, or raise :class:`NotCompilable`."""
    if mode not in MODES:
        raise ValueError(f"unknown envelope mode {mode!r}")
    space = table.space
    d = space.d
    caps = np.array(space.capacities, dtype=np.int64)
    ashes: list[Ashe] = []
    ev_kind, ev_ref = [], []
    pw_root, nodes, hps, zones = [], [], [], []

    def add_ashe(a: Ashe) -> int:
        ashes.append(a)
        return len(ashes) - 1

    for ev in table.events:
        sem = ev.semantics
        if isinstance(sem, Ashe):
            ev_kind.append(KIND_ASHE)
            ev_ref.append(add_ashe(sem))
        elif isinstance(sem, PiecewiseEvent):
            ev_kind.append(KIND_PIECEWISE)
            ev_ref.append(len(pw_root))
            node_off, hp_off, zone_off = len(nodes), len(hps), len(zones)
            pw_root.append(node_off + sem.graph.root)
            for nd in sem.graph.nodes:
                nodes.append(
                    (
                        hp_off + nd.hyperplane if nd.hyperplane >= 0 else -1,
                        node_off + nd.neg if nd.neg >= 0 else -1,
                        node_off + nd.pos if nd.pos >= 0 else -1,
                        zone_off + nd.zone if nd.zone >= 0 else -1,
                    )
                )
            hps.extend(_scaled(hp.normal, hp.offset) for hp in sem.hyperplanes)
            for z in sem.zones:
                zones.append((z, add_ashe(z.event)))
        else:
            raise NotCompilable(f"event {ev.label!r} has semantics {type(sem).__name__}")

    av = np.zeros((max(len(ashes), 1), d), dtype=np.int64)
    ablk = np.zeros((max(len(ashes), 1), d, d), dtype=np.bool_)
    for k, a in enumerate(ashes):
        if a.d != d:
            raise NotCompilable("event dimension does not match the space")
        av[k] = a.v
        for i, targets in enumerate(a._targets):
            for j in targets:
                ablk[k, i, j] = True

    n_nodes = max(len(nodes), 1)
    node_arr = np.full((n_nodes, 4), -1, dtype=np.int64)
    for k, nd in enumerate(nodes):
        node_arr[k] = nd
    hp_a = np.zeros((max(len(hps), 1), d), dtype=np.int64)
    hp_c = np.zeros(max(len(hps), 1), dtype=np.int64)
    for k, (a, c) in enumerate(hps):
        hp_a[k], hp_c[k] = a, c

    nz = max(len(zones), 1)
    zone_ashe = np.zeros(nz, dtype=np.int64)
    zone_ilo = np.zeros((nz, d), dtype=np.int64)
    zone_ihi = np.zeros((nz, d), dtype=np.int64)
    ax_lo = np.zeros((nz, d), dtype=np.int64)
    ax_hi = np.zeros((nz, d), dtype=np.int64)
    mk_start, mk_rows = [0], []
    lp_start, lp_rows = [0], []
    for k, (z, ref) in enumerate(zones):
        zone_ashe[k] = ref
        zone_ilo[k], zone_ihi[k] = z.bounds.int_lo, z.bounds.int_hi
        lo, hi = [0] * d, list(space.capacities)
        sloped = []
        for row, c in zip(z.polytope.A, z.polytope.b):
            nzi = [i for i, a in enumerate(row) if a != 0]
            if len(nzi) == 1:
                # rows were normalized to +-x_i <= integer
                i = nzi[0]
                if row[i] > 0:
                    hi[i] = min(hi[i], int(c))
                else:
                    lo[i] = max(lo[i], int(-c))
            else:
                sloped.append(_scaled(row, c))
        ax_lo[k], ax_hi[k] = lo, hi
        if mode == LP_EXACT and len(sloped) > 1:
            raise NotCompilable(
                f"zone {z.name or z.signs!r} has {len(sloped)} sloped rows; LP mode needs the rational solver"
            )
        lp_rows.extend(sloped)
        lp_start.append(len(lp_rows))
        mk_rows.extend(_scaled(row, c) for row, c in z.minkowski_rows())
        mk_start.append(len(mk_rows))

    def rows_to_arrays(rows):
        a = np.zeros((max(len(rows), 1), d), dtype=np.int64)
        c = np.zeros(max(len(rows), 1), dtype=np.int64)
        for k, (ra, rc) in enumerate(rows):
            a[k], c[k] = ra, rc
        return a, c

    mk_a, mk_c = rows_to_arrays(mk_rows)
    lp_a, lp_c = rows_to_arrays(lp_rows)
    return CompiledModel(
        caps,
        np.array(ev_kind, dtype=np.int64),
        np.array(ev_ref, dtype=np.int64),
        av,
        ablk,
        np.array(pw_root or [0], dtype=np.int64),
        np.ascontiguousarray(node_arr[:, 0]),
        np.ascontiguousarray(node_arr[:, 1]),
        np.ascontiguousarray(node_arr[:, 2]),
        np.ascontiguousarray(node_arr[:, 3]),
        hp_a,
        hp_c,
        zone_ashe,
        zone_ilo,
        zone_ihi,
        np.array(mk_start, dtype=np.int64),
        mk_a,
        mk_c,
        ax_lo,
        ax_hi,
        np.array(lp_start, dtype=np.int64),
        lp_a,
        lp_c,
        np.int64(mode != LP_EXACT),
    )


# -- ASHE ------------------------------------------------------------------


@njit(cache=True, inline="always")
def _crit(av, r, caps, x, i):
    # branch-free: short-circuit forms mispredict badly on random event streams
    v = av[r, i]
    y = x[i] + v
    return (v != 0) & ((y < 0) | (y > caps[i]))


@njit(cache=True, inline="always")
def _sat(y, c):
    return min(max(y, 0), c)


@njit(cache=True, inline="always")
def _crit_row(av, r, caps, X, k, i):
    v = av[r, i]
    y = X[k, i] + v
    return (v != 0) & ((y < 0) | (y > caps[i]))


@njit(cache=True, inline="always")
def ashe_apply(av, ablk, r, caps, X, kx, Y, ky):
    """Row ``ky`` of ``Y`` := row ``kx`` of ``X`` under ASHE ``r``."""
    d = caps.shape[0]
    for j in range(d):
        vj = av[r, j]
        if vj == 0:
            Y[ky, j] = X[kx, j]
            continue
        blocked = False
        for i in range(d):
            blocked |= ablk[r, i, j] & _crit_row(av, r, caps, X, kx, i)
        Y[ky, j] = X[kx, j] if blocked else _sat(X[kx, j] + vj, caps[j])


@njit(cache=True, inline="always")
def ashe_envelope(av, ablk, r, caps, m, M, lo, hi):
    d = caps.shape[0]
    for j in range(d):
        vj = av[r, j]
        lo[j] = m[j]
        hi[j] = M[j]
        if vj == 0:
            continue
        in_x = False
        in_y = False
        by_other = False
        for i in range(d):
            b = ablk[r, i, j]
            cm = b & _crit(av, r, caps, m, i)
            cM = b & _crit(av, r, caps, M, i)
            in_x |= cm | cM
            in_y |= cm & cM
            by_other |= (cm | cM) & (i != j)
        if in_y:
            continue
        c = caps[j]
        if not in_x:
            lo[j] = _sat(m[j] + vj, c)
            hi[j] = _sat(M[j] + vj, c)
        elif by_other:
            if vj < 0:
                lo[j] = max(m[j] + vj, 0)
            else:
                hi[j] = min(M[j] + vj, c)
        elif vj < 0:
            lo[j] = 0
            hi[j] = max(M[j] + vj, -vj - 1)
        else:
            lo[j] = min(m[j] + vj, c - vj + 1)
            hi[j] = c


# -- piecewise ---------------------------------------------------------------


@njit(cache=True)
def _zone_box(model, z, m, M, bl, bh, nlo, nhi):
    """Box bounding ``[m, M] ∩ zone z`` in ``bl, bh``; False if provably empty."""
    d = m.shape[0]
    if model[23]:
        mk_start, mk_a, mk_c = model[15], model[16], model[17]
        for r in range(mk_start[z], mk_start[z + 1]):
            lhs = 0
            rhs = 2 * mk_c[r]
            for i in range(d):
                a = mk_a[r, i]
                lhs += a * (m[i] + M[i])
                rhs += abs(a) * (M[i] - m[i])
            if lhs > rhs:
                return False
        ilo, ihi = model[13], model[14]
        for i in range(d):
            if M[i] < ilo[z, i] or m[i] > ihi[z, i]:
                return False
            bl[i] = max(m[i], ilo[z, i])
            bh[i] = min(M[i], ihi[z, i])
            if bl[i] > bh[i]:
                return False
        return True
    ax_lo, ax_hi = model[18], model[19]
    lp_start, lp_a, lp_c = model[20], model[21], model[22]
    for i in range(d):
        bl[i] = max(m[i], ax_lo[z, i])
        bh[i] = min(M[i], ax_hi[z, i])
        if bl[i] > bh[i]:
            return False
    for r in range(lp_start[z], lp_start[z + 1]):
        # closed-form LP of one halfspace over the box; extremes use the
        # unrounded box for every coordinate, then round
        smin = 0
        for i in range(d):
            a = lp_a[r, i]
            smin += a * bl[i] if a >= 0 else a * bh[i]
        c = lp_c[r]
        if smin > c:
            return False
        for i in range(d):
            nlo[i] = bl[i]
            nhi[i] = bh[i]
        for i in range(d):
            a = lp_a[r, i]
            if a > 0:
                rest = smin - a * bl[i]
                nhi[i] = min(bh[i], (c - rest) // a)
            elif a < 0:
                rest = smin - a * bh[i]
                nlo[i] = max(bl[i], -((c - rest) // (-a)))
        for i in range(d):
            bl[i] = nlo[i]
            bh[i] = nhi[i]
            if bl[i] > bh[i]:
                return False
    return True


@njit(cache=True)
def _pw_envelope(model, p, m, M, lo, hi, marks, epoch, stack, scr):
    caps = model[0]
    av, ablk = model[3], model[4]
    node_hp, node_neg, node_pos, node_zone = model[6], model[7], model[8], model[9]
    hp_a, hp_c, zone_ashe = model[10], model[11], model[12]
    d = m.shape[0]
    bl, bh, tl, th, ql, qh = scr[0], scr[1], scr[2], scr[3], scr[4], scr[5]
    found = False
    root = model[5][p]
    top = 0
    stack[top] = root
    top += 1
    marks[root] = epoch
    while top > 0:
        top -= 1
        k = stack[top]
        z = node_zone[k]
        if z >= 0:
            if not _zone_box(model, z, m, M, bl, bh, ql, qh):
                continue
            ashe_envelope(av, ablk, zone_ashe[z], caps, bl, bh, tl, th)
            if not found:
                for i in range(d):
                    lo[i] = tl[i]
                    hi[i] = th[i]
                found = True
            else:
                for i in range(d):
                    lo[i] = min(lo[i], tl[i])
                    hi[i] = max(hi[i], th[i])
            continue
        h = node_hp[k]
        mn = 0
        mx = 0
        for i in range(d):
            a = hp_a[h, i]
            if a >= 0:
                mn += a * m[i]
                mx += a * M[i]
            else:
                mn += a * M[i]
                mx += a * m[i]
        c = hp_c[h]
        child = node_pos[k]
        if mx > c and marks[child] != epoch:
            marks[child] = epoch
            stack[top] = child
            top += 1
        child = node_neg[k]
        if mn <= c and marks[child] != epoch:
            marks[child] = epoch
            stack[top] = child
            top += 1
    if not found:
        raise AssertionError("interval meets no zone; the partition must cover the box")


@njit(cache=True)
def _zone_ashe_at(roots, node_hp, node_neg, node_pos, node_zone, hp_a, zone_ashe, hp_c, p, X, kx):
    """ASHE row acting at row ``kx`` of ``X`` under piecewise event ``p``."""
    k = roots[p]
    while node_zone[k] < 0:
        h = node_hp[k]
        s = 0
        for i in range(X.shape[1]):
            s += hp_a[h, i] * X[kx, i]
        k = node_neg[k] if s <= hp_c[h] else node_pos[k]
    return zone_ashe[node_zone[k]]


@njit(cache=True)
def envelope_sweep(model, labels, n, lo, hi):
    """Drive ``[bottom, top]`` through ``labels[n-1], ..., labels[0]`` in place."""
    caps = model[0]
    d = caps.shape[0]
    for i in range(d):
        lo[i] = 0
        hi[i] = caps[i]
    nn = model[6].shape[0]
    marks = np.zeros(nn, np.int64)
    stack = np.empty(nn + 1, np.int64)
    nlo = np.empty(d, np.int64)
    nhi = np.empty(d, np.int64)
    scr = np.empty((6, d), np.int64)
    kinds, rows, av, ablk = model[1], model[2], model[3], model[4]
    for t in range(n - 1, -1, -1):
        e = labels[t]
        if kinds[e] == 0:
            ashe_envelope(av, ablk, rows[e], caps, lo, hi, nlo, nhi)
        else:
            _pw_envelope(model, rows[e], lo, hi, nlo, nhi, marks, n - t, stack, scr)
        for i in range(d):
            lo[i] = nlo[i]
            hi[i] = nhi[i]


@njit(cache=True)
def split_sweep(model, labels, n, threshold, state_cap, out):
    """Envelope sweep switching to exact trajectories once the width is small.

    Returns ``(status, work)``: status 0 = coalesced (sample in ``out``),
    1 = not coalesced at time 0, 2 = interval above ``state_cap`` at the
    switch.
    """
    caps = model[0]
    d = caps.shape[0]
    lo = np.empty(d, np.int64)
    hi = np.empty(d, np.int64)
    nlo = np.empty(d, np.int64)
    nhi = np.empty(d, np.int64)
    for i in range(d):
        lo[i] = 0
        hi[i] = caps[i]
    nn = model[6].shape[0]
    marks = np.zeros(nn, np.int64)
    stack = np.empty(nn + 1, np.int64)
    scr = np.empty((6, d), np.int64)
    kinds, rows, av, ablk = model[1], model[2], model[3], model[4]
    work = 0
    t = n - 1
    switched = False
    while t >= 0:
        w = 0
        for i in range(d):
            w += hi[i] - lo[i]
        if w <= threshold:
            switched = True
            break
        e = labels[t]
        if kinds[e] == 0:
            ashe_envelope(av, ablk, rows[e], caps, lo, hi, nlo, nhi)
        else:
            _pw_envelope(model, rows[e], lo, hi, nlo, nhi, marks, n - t, stack, scr)
        work += 1
        for i in range(d):
            lo[i] = nlo[i]
            hi[i] = nhi[i]
        t -= 1
    if not switched:
        w = 0
        for i in range(d):
            w += hi[i] - lo[i]
        if w == 0:
            for i in range(d):
                out[i] = lo[i]
            return 0, work
        return 1, work
    count = 1
    for i in range(d):
        count *= hi[i] - lo[i] + 1
    if count > state_cap:
        return 2, work
    states = np.empty((count, d), np.int64)
    cur = lo.copy()
    for k in range(count):
        for i in range(d):
            states[k, i] = cur[i]
        for i in range(d - 1, -1, -1):
            if cur[i] < hi[i]:
                cur[i] += 1
                break
            cur[i] = lo[i]
    m = model
    status, w = _track(
        m[1], m[2], m[3], m[4], m[0], m[5], m[6], m[7], m[8], m[9], m[10], m[11], m[12], labels, t, states, out
    )
    return status, work + w


@njit(cache=True)
def psa_compose(T, labels, start, stop, S, scratch):
    """Extend the trajectory map ``S`` by ``labels[start:stop]`` (one per step).

    Returns the horizon at which ``S`` became constant, or -1.
    """
    n_states = S.shape[0]
    for t in range(start, stop):
        row = T[labels[t]]
        first = S[row[0]]
        const = True
        for x in range(n_states):
            y = S[row[x]]
            scratch[x] = y
            if y != first:
                const = False
        for x in range(n_states):
            S[x] = scratch[x]
        if const:
            return t + 1
    return -1


@njit(cache=True)
def _track(kinds, rows, av, ablk, caps, roots, nhp, nneg, npos, nzone, hpa, hpc, zash, labels, t, states, out):
    """Follow every row of ``states`` from time ``-t`` to 0, merging duplicates."""
    count, d = states.shape
    work = 0
    nxt = np.empty((count, d), np.int64)
    codes = np.empty(count, np.int64)
    while t >= 0 and count > 1:
        e = labels[t]
        for k in range(count):
            r = rows[e]
            if kinds[e] != 0:
                r = _zone_ashe_at(roots, nhp, nneg, npos, nzone, hpa, zash, hpc, r, states, k)
            ashe_apply(av, ablk, r, caps, states, k, nxt, k)
            c = 0
            for i in range(d):
                c = c * (caps[i] + 1) + nxt[k, i]
            codes[k] = c
        work += count
        kept = 0
        if count <= 64:
            # a few trajectories: pairwise dedupe beats sorting
            for k in range(count):
                dup = False
                for q in range(k):
                    dup |= codes[q] == codes[k]
                if not dup:
                    for i in range(d):
                        states[kept, i] = nxt[k, i]
                    kept += 1
        else:
            order = np.argsort(codes[:count], kind="mergesort")
            last = -1
            for q in range(count):
                k = order[q]
                if q == 0 or codes[k] != last:
                    for i in range(d):
                        states[kept, i] = nxt[k, i]
                    kept += 1
                    last = codes[k]
        count = kept
        t -= 1
    if count > 1:
        return 1, work
    x = states[:1].copy()
    y = np.empty((1, d), np.int64)
    while t >= 0:
        e = labels[t]
        r = rows[e]
        if kinds[e] != 0:
            r = _zone_ashe_at(roots, nhp, nneg, npos, nzone, hpa, zash, hpc, r, x, 0)
        ashe_apply(av, ablk, r, caps, x, 0, y, 0)
        work += 1
        for i in range(d):
            x[0, i] = y[0, i]
        t -= 1
    for i in range(d):
        out[i] = x[0, i]
    return 0, work


STATUS_OK = 0
STATUS_NOT_COALESCED = 1
STATUS_STATE_CAP = 2
STATUS_NEED_LABELS = 3
STATUS_CAP = 4


@njit(cache=True)
def _certify(model, labels, n, split, threshold, state_cap, out):
    """One horizon: ``(status, work)`` with the sample in ``out`` on success."""
    if split:
        return split_sweep(model, labels, n, threshold, state_cap, out)
    d = out.shape[0]
    lo = np.empty(d, np.int64)
    hi = np.empty(d, np.int64)
    envelope_sweep(model, labels, n, lo, hi)
    for i in range(d):
        if lo[i] != hi[i]:
            return STATUS_NOT_COALESCED, n
    for i in range(d):
        out[i] = lo[i]
    return STATUS_OK, n


@njit(cache=True)
def doubling_search(model, labels, start, cap, minimal, split, threshold, state_cap, out):
    """Doubling search from horizon ``start``, then bisection to the minimal horizon.

    Returns ``(status, n, tau, work, search_work)``.  With
    ``STATUS_NEED_LABELS`` the caller must supply at least ``n`` labels and
    call again with ``start = n``; ``work`` covers what was done so far.
    """
    n = start
    work = 0
    while True:
        if n > labels.shape[0]:
            return STATUS_NEED_LABELS, n, 0, work, 0
        status, w = _certify(model, labels, n, split, threshold, state_cap, out)
        work += w
        if status == STATUS_OK:
            break
        if status == STATUS_STATE_CAP:
            return status, n, 0, work, 0
        if n >= cap:
            return STATUS_CAP, n, 0, work, 0
        n = min(2 * n, cap)
    if not minimal:
        return STATUS_OK, n, n, work, 0
    tmp = np.empty_like(out)
    lo = n // 2
    hi = n
    search = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        status, w = _certify(model, labels, mid, split, threshold, state_cap, tmp)
        search += w
        if status == STATUS_OK:
            hi = mid
        else:
            lo = mid
    return STATUS_OK, n, hi, work, search
