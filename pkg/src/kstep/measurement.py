"""Estimators that turn snapshots, event logs and trajectories into hydrodynamic quantities.

Includes a brute-force oracle: on small rings the pushing dynamics is a
finite Markov chain, so its generator can be enumerated exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .engine import (
    BondTally,
    Configuration,
    EventLog,
    PushMove,
    Snapshot,
    TaggedTrajectory,
    apply_push,
    first_vacancy,
)
from .riemann import SelfSimilarSolution

DEFAULT_HALF_WIDTH = 0.02
DEFAULT_EXCLUSION = 0.15


class WindowError(ValueError):
    """A measurement window reaches outside the simulated lattice."""


@dataclass
class ProfileEstimate:
    velocities: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    half_width: float
    n_replicas: int
    time: float

    def rows(self):
        for v, m, s in zip(self.velocities, self.mean, self.stderr):
            yield float(v), float(m), float(s), self.n_replicas


def _window_sites(config: Configuration, lo: int, hi: int) -> np.ndarray:
    sites = np.arange(lo, hi + 1) - config.origin_offset
    if config.ring:
        return sites % config.size
    if sites[0] < 0 or sites[-1] >= config.size:
        raise WindowError(
            f"window [{lo}, {hi}] outside lattice [{config.origin_offset}, "
            f"{config.origin_offset + config.size - 1}]"
        )
    return sites


def _window_bounds(v: float, t: float, half_width: float) -> tuple[int, int]:
    lo = math.ceil(v * t - half_width * t)
    hi = math.floor(v * t + half_width * t)
    if hi < lo:
        lo = hi = math.floor(v * t)
    return lo, hi


def _check_common(snapshots: Sequence[Snapshot]) -> tuple[float, Configuration]:
    if not snapshots:
        raise ValueError("no snapshots")
    t = snapshots[0].time
    ref = snapshots[0].config
    for s in snapshots[1:]:
        c = s.config
        if s.time != t or c.size != ref.size or c.origin_offset != ref.origin_offset or c.topology != ref.topology:
            raise ValueError("snapshots must share time and lattice geometry")
    return t, ref


def empirical_profile(snapshots: Sequence[Snapshot], velocities, half_width: float = DEFAULT_HALF_WIDTH) -> ProfileEstimate:
    """Mean occupation in windows [v t - w t, v t + w t], averaged over replicas.

    The standard error is taken across replicas. With a single replica the
    binomial estimate over the window is used instead.
    """
    t, ref = _check_common(snapshots)
    velocities = np.asarray(velocities, dtype=float)
    if velocities.size > 1 and np.any(np.diff(velocities) <= 0):
        raise ValueError("velocity grid must be strictly increasing")
    R = len(snapshots)
    per = np.empty((R, velocities.size))
    counts = np.empty(velocities.size, dtype=int)
    for i, v in enumerate(velocities):
        sites = _window_sites(ref, *_window_bounds(v, t, half_width))
        counts[i] = sites.size
        for r, s in enumerate(snapshots):
            per[r, i] = s.config.occupancy[sites].mean()
    mean = per.mean(axis=0)
    if R > 1:
        stderr = per.std(axis=0, ddof=1) / math.sqrt(R)
    else:
        stderr = np.sqrt(mean * (1 - mean) / counts)
    return ProfileEstimate(velocities, mean, stderr, half_width, R, t)


def cesaro_times(horizon: float, samples: int) -> np.ndarray:
    """Evenly spaced sample times in (0, horizon]."""
    return horizon * np.arange(1, samples + 1) / samples


def cesaro_profile(snapshots: Sequence[Snapshot], velocity: float) -> float:
    """Time average of the occupation at coordinate [v t] over a single run.

    ``snapshots`` should be taken at :func:`cesaro_times`.
    """
    if not snapshots:
        raise ValueError("no snapshots")
    vals = []
    for s in snapshots:
        x = math.floor(velocity * s.time)
        vals.append(s.config.occupancy[_window_sites(s.config, x, x)[0]])
    return float(np.mean(vals))


def _n_bonds(size: int, topology: str) -> int:
    return size if topology == "ring" else size - 1


def bond_current(source: EventLog | BondTally, interval: tuple[float, float] | None = None,
                 bond: int | None = None) -> float:
    """Particles crossing a bond per unit time.

    With ``bond=None`` the count is averaged over all bonds (space-time
    average). A push of extent m moves exactly one particle across each of
    the bonds (x, x+1), ..., (x+m-1, x+m).
    """
    if isinstance(source, BondTally):
        t0, t1 = source.t0, source.t1
        if interval is not None and tuple(interval) != (t0, t1):
            raise ValueError("a tally can only be read over its own interval")
        dur = t1 - t0
        if dur <= 0:
            raise ValueError("empty interval")
        c = source.crossings
        if bond is None:
            return float(c.sum()) / (_n_bonds(c.size, source.topology) * dur)
        return float(c[bond]) / dur
    if interval is None:
        raise ValueError("an interval is required for an event log")
    t0, t1 = interval
    if t1 <= t0:
        raise ValueError("empty interval")
    sel = (source.times >= t0) & (source.times < t1)
    ext = source.extents[sel]
    if bond is None:
        return float(ext.sum()) / (_n_bonds(source.size, source.topology) * (t1 - t0))
    d = bond - source.sources[sel]
    if source.topology == "ring":
        d %= source.size
    return float(np.count_nonzero((d >= 0) & (d < ext))) / (t1 - t0)


def current_with_error(log: EventLog, interval: tuple[float, float], batches: int = 50) -> tuple[float, float]:
    """Space-time current and its batch-means standard error."""
    t0, t1 = interval
    edges = np.linspace(t0, t1, batches + 1)
    vals = np.array([bond_current(log, (a, b)) for a, b in zip(edges[:-1], edges[1:])])
    return bond_current(log, interval), float(vals.std(ddof=1) / math.sqrt(batches))


@dataclass
class SpeedEstimate:
    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int
    horizon: float
    confidence: float

    def to_dict(self) -> dict:
        return asdict(self)


def lln_estimate(trajectories: Sequence[TaggedTrajectory], confidence: float = 0.95) -> SpeedEstimate:
    """Mean of Y(T)/T across replicas with a normal-approximation confidence interval."""
    if len(trajectories) < 2:
        raise ValueError("need at least two trajectories")
    T = float(trajectories[0].times[-1])
    alpha = trajectories[0].alpha
    for tr in trajectories:
        if tr.alpha != alpha or float(tr.times[-1]) != T:
            raise ValueError("trajectories must share alpha and horizon")
    speeds = np.array([(tr.positions[-1] - tr.positions[0]) / T for tr in trajectories], dtype=float)
    mean = float(speeds.mean())
    se = float(speeds.std(ddof=1) / math.sqrt(len(speeds)))
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    return SpeedEstimate(mean, se, mean - z * se, mean + z * se, len(speeds), T, confidence)


def two_point_correlation(snapshots: Sequence[Snapshot], velocity: float,
                          half_width: float = DEFAULT_HALF_WIDTH, lag: int = 1) -> float:
    """Pooled estimate of E[eta(x) eta(x+lag)] - E[eta(x)] E[eta(x+lag)] over a window."""
    t, ref = _check_common(snapshots)
    lo, hi = _window_bounds(velocity, t, half_width)
    a_sites = _window_sites(ref, lo, hi - lag)
    b_sites = _window_sites(ref, lo + lag, hi)
    a = np.concatenate([s.config.occupancy[a_sites] for s in snapshots]).astype(float)
    b = np.concatenate([s.config.occupancy[b_sites] for s in snapshots]).astype(float)
    return float((a * b).mean() - a.mean() * b.mean())


# --- brute-force oracle ------------------------------------------------------

MAX_ORACLE_STATES = 20_000


def ring_states(size: int, n: int) -> np.ndarray:
    """All ring configurations with ``n`` particles, one per row."""
    if math.comb(size, n) > MAX_ORACLE_STATES:
        raise ValueError(f"sector of C({size}, {n}) states is too large to enumerate")
    out = np.zeros((math.comb(size, n), size), dtype=np.uint8)
    for i, pos in enumerate(itertools.combinations(range(size), n)):
        out[i, list(pos)] = 1
    return out


def ring_rate_matrix(size: int, k: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """States and exact generator Q of the pushing dynamics on a ring sector.

    Uses :func:`first_vacancy` and :func:`apply_push` on every state, one
    move at a time, without the simulation kernel.
    """
    states = ring_states(size, n)
    index = {s.tobytes(): i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        cfg = Configuration(s.copy())
        for x in np.nonzero(s)[0]:
            m = first_vacancy(cfg, int(x), k)
            if m is None:
                continue
            j = index[apply_push(cfg, PushMove(int(x), m)).occupancy.tobytes()]
            Q[i, j] += 1.0
            Q[i, i] -= 1.0
    return states, Q


def expected_extent_rate(states: np.ndarray, k: int) -> np.ndarray:
    """Per state: sum of push extents over the active particles."""
    out = np.zeros(len(states))
    for i, s in enumerate(states):
        cfg = Configuration(s)
        out[i] = sum(first_vacancy(cfg, int(x), k) or 0 for x in np.nonzero(s)[0])
    return out


@dataclass
class OracleReport:
    size: int
    k: int
    n: int
    n_states: int
    residual: float
    current: float
    absorbing: bool
    stationary: bool = field(init=False)

    def __post_init__(self):
        self.stationary = self.residual <= 1e-12

    def to_dict(self) -> dict:
        return asdict(self)


def stationarity_oracle(size: int, k: int, n: int) -> OracleReport:
    """Check that the uniform law on the n-particle ring sector is stationary.

    The returned current is the exact expected number of particles crossing
    a bond per unit time under that law.
    """
    states, Q = ring_rate_matrix(size, k, n)
    N = len(states)
    pi = np.full(N, 1.0 / N)
    residual = float(np.max(np.abs(pi @ Q))) if N else 0.0
    current = float(pi @ expected_extent_rate(states, k)) / size
    absorbing = bool(np.all(Q == 0.0))
    return OracleReport(size, k, n, N, residual, current, absorbing)


# --- comparison with the PDE -------------------------------------------------


@dataclass
class ComparisonReport:
    sup_error: float
    l1_error: float
    excluded: list[tuple[float, float]]
    n_points: int
    tolerance: float
    passed: bool
    worst_velocity: float
    max_z: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["excluded"] = [list(e) for e in self.excluded]
        return d


def compare_to_solution(profile: ProfileEstimate, sol: SelfSimilarSolution,
                        exclusion: float = DEFAULT_EXCLUSION, tolerance: float = 0.02) -> ComparisonReport:
    """Sup and L1 distance between an empirical profile and the exact solution.

    Grid points within ``exclusion`` of a discontinuity velocity are skipped.

    Raises:
        ValueError: if no grid point survives the exclusion.
    """
    v = np.asarray(profile.velocities, dtype=float)
    excluded = [(d.velocity - exclusion, d.velocity + exclusion) for d in sol.discontinuities]
    keep = np.ones(v.size, dtype=bool)
    for lo, hi in excluded:
        keep &= ~((v >= lo) & (v <= hi))
    if not keep.any():
        raise ValueError("no grid point lies away from the discontinuities")
    err = np.abs(profile.mean - sol(v))
    widths = np.gradient(v) if v.size > 1 else np.ones(1)
    sup = float(err[keep].max())
    worst = float(v[keep][np.argmax(err[keep])])
    se = np.asarray(profile.stderr)[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, err[keep] / se, np.where(err[keep] > 0, np.inf, 0.0))
    return ComparisonReport(
        sup_error=sup,
        l1_error=float(np.sum(err[keep] * widths[keep])),
        excluded=excluded,
        n_points=int(keep.sum()),
        tolerance=tolerance,
        passed=sup <= tolerance,
        worst_velocity=worst,
        max_z=float(np.max(z)),
    )
