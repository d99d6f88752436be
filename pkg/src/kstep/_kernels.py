"""Compiled event loops.

The Gillespie loop keeps every active particle in an array with swap-remove
deletion and a site -> slot map. In the totally asymmetric pushing dynamics
each active particle rings at rate 1, so the next event is a uniform pick
from that array.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def push_extent(occ, s, ring, k):
    """Offset of the first vacancy ahead of an occupied site, 0 if none within k."""
    L = occ.size
    if occ[s] == 0:
        return 0
    for j in range(1, k + 1):
        y = s + j
        if y >= L:
            if not ring:
                return 0
            y -= L
        if occ[y] == 0:
            return j
    return 0


@njit(cache=True, nogil=True)
def init_active(occ, ring, k, active, slot):
    n = 0
    for s in range(occ.size):
        slot[s] = -1
        if push_extent(occ, s, ring, k) > 0:
            slot[s] = n
            active[n] = s
            n += 1
    return n


@njit(cache=True, nogil=True)
def _refresh(occ, ring, k, active, slot, n, s):
    on = push_extent(occ, s, ring, k) > 0
    if on and slot[s] < 0:
        slot[s] = n
        active[n] = s
        n += 1
    elif not on and slot[s] >= 0:
        i = slot[s]
        last = active[n - 1]
        active[i] = last
        slot[last] = i
        slot[s] = -1
        n -= 1
    return n


@njit(cache=True, nogil=True)
def _apply(occ, ring, x, m):
    L = occ.size
    y = x + m
    if y >= L:
        y -= L
    occ[x] = 0
    occ[y] = 1


@njit(cache=True, nogil=True)
def advance(occ, ring, k, active, slot, n, t, t_end, rng, max_events,
            snap_times, snaps, tag, tag_times, tag_out,
            tally_t0, tally_t1, crossings, log_t, log_src, log_ext):
    """Run the Gillespie loop until ``t_end`` or ``max_events`` events.

    ``tag`` is a length-2 int64 array (site, displacement) with site -1 when
    no particle is tagged. Snapshots and tag samples at requested times hold
    the state after every event with time <= the requested time.

    Returns (n_active, time, events, deadlocked).
    """
    L = occ.size
    si = 0
    ti = 0
    nsnap = snap_times.size
    ntag = tag_times.size
    ev = 0
    nlog = log_t.size
    tally = crossings.size > 0
    while si < nsnap and snap_times[si] < t:
        si += 1
    while ti < ntag and tag_times[ti] < t:
        ti += 1
    deadlocked = False
    while ev < max_events:
        if n == 0:
            deadlocked = True
            t_next = np.inf
        else:
            t_next = t + rng.exponential(1.0 / n)
        while si < nsnap and snap_times[si] < t_next and snap_times[si] <= t_end:
            snaps[si, :] = occ
            si += 1
        while ti < ntag and tag_times[ti] < t_next and tag_times[ti] <= t_end:
            tag_out[ti] = tag[1]
            ti += 1
        if deadlocked or t_next > t_end:
            break
        x = active[int(rng.random() * n)]
        m = push_extent(occ, x, ring, k)
        _apply(occ, ring, x, m)
        t = t_next
        if tag[0] >= 0:
            d = tag[0] - x
            if d < 0 and ring:
                d += L
            if 0 <= d < m:
                tag[0] = tag[0] + 1 if tag[0] + 1 < L else 0
                tag[1] += 1
        if tally and tally_t0 <= t < tally_t1:
            for j in range(m):
                b = x + j
                if b >= L:
                    b -= L
                crossings[b] += 1
        if ev < nlog:
            log_t[ev] = t
            log_src[ev] = x
            log_ext[ev] = m
        ev += 1
        lo = x - k
        for s0 in range(lo, x + m + 1):
            s = s0
            if s < 0:
                if not ring:
                    continue
                s += L
            elif s >= L:
                if not ring:
                    continue
                s -= L
            n = _refresh(occ, ring, k, active, slot, n, s)
    return n, t, ev, deadlocked


@njit(cache=True, nogil=True)
def coupled(lo, hi, ring, k, t_end, rng, snap_times, snaps_lo, snaps_hi):
    """Basic coupling with one rate-1 clock per site, shared by both copies.

    When site x rings, each copy that has a particle at x performs its own
    push. Returns (events, sitewise-order violations seen after any event).
    """
    L = lo.size
    t = 0.0
    si = 0
    nsnap = snap_times.size
    ev = 0
    bad = 0
    while True:
        t_next = t + rng.exponential(1.0 / L)
        while si < nsnap and snap_times[si] < t_next and snap_times[si] <= t_end:
            snaps_lo[si, :] = lo
            snaps_hi[si, :] = hi
            si += 1
        if t_next > t_end:
            break
        t = t_next
        x = int(rng.random() * L)
        m_lo = push_extent(lo, x, ring, k)
        m_hi = push_extent(hi, x, ring, k)
        if m_lo > 0:
            _apply(lo, ring, x, m_lo)
        if m_hi > 0:
            _apply(hi, ring, x, m_hi)
        ev += 1
        top = m_lo if m_lo > m_hi else m_hi
        for j in range(top + 1):
            s = x + j
            if s >= L:
                if not ring:
                    break
                s -= L
            if lo[s] > hi[s]:
                bad += 1
    return ev, bad
