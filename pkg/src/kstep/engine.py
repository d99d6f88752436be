"""Exact simulation of the totally asymmetric k-step exclusion process.

The dynamics use the pushing picture. An active particle at x whose first
vacancy ahead is at x + m (m <= k) moves the pack x, ..., x + m - 1 one site
to the right. Every occupied site with a vacancy within k sites ahead rings at
rate 1. Particle order is preserved, which makes a tagged particle well
defined.

Lattices are either rings or segments. A segment stands in for a window
[-A, B] of Z: no particle enters, and none leaves through the right end.
Measurements are valid only while the boundaries lie outside the information
cone of the measured region, which :func:`check_horizon` enforces.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

RING = "ring"
SEGMENT = "segment"
RNG_ALGORITHM = "numpy PCG64, stream SeedSequence(entropy=seed, spawn_key=(replica,))"


class HorizonError(ValueError):
    """The measured region is within reach of a segment boundary."""


class InvalidMoveError(ValueError):
    pass


def make_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for replica ``replica`` of run ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replica,))))


def max_speed(k: int) -> float:
    """Bound on characteristic speeds, |G'(1)| = k(k+1)/2 (3 for k = 2)."""
    return k * (k + 1) / 2.0


# --- configurations ----------------------------------------------------------


@dataclass
class Configuration:
    """Occupancy of sites 0..L-1; site i has lattice coordinate i + origin_offset.

    ``labels`` optionally stores a particle label per site (-1 when empty).
    """

    occupancy: np.ndarray
    topology: str = RING
    origin_offset: int = 0
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.occupancy = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        if self.topology not in (RING, SEGMENT):
            raise ValueError(f"unknown topology {self.topology!r}")
        if np.any(self.occupancy > 1):
            raise ValueError("occupancy must be 0/1")

    @property
    def size(self) -> int:
        return int(self.occupancy.size)

    @property
    def n_particles(self) -> int:
        return int(self.occupancy.sum())

    @property
    def ring(self) -> bool:
        return self.topology == RING

    def site(self, coordinate: int) -> int:
        s = coordinate - self.origin_offset
        if self.ring:
            return s % self.size
        if not 0 <= s < self.size:
            raise IndexError(f"coordinate {coordinate} outside the segment")
        return s

    def coordinate(self, site: int) -> int:
        return site + self.origin_offset

    def copy(self) -> "Configuration":
        return Configuration(
            self.occupancy.copy(), self.topology, self.origin_offset,
            None if self.labels is None else self.labels.copy(),
        )

    @classmethod
    def from_bits(cls, bits, topology: str = RING, origin_offset: int = 0, labelled: bool = False):
        occ = np.asarray(bits, dtype=np.uint8)
        labels = None
        if labelled:
            labels = np.full(occ.size, -1, dtype=np.int64)
            labels[occ == 1] = np.arange(int(occ.sum()))
        return cls(occ, topology, origin_offset, labels)


@dataclass(frozen=True)
class Snapshot:
    time: float
    config: Configuration


# --- initial measures --------------------------------------------------------


@dataclass(frozen=True)
class Bernoulli:
    alpha: float


@dataclass(frozen=True)
class Step:
    """Product measure with density lam at coordinates x <= 0 and rho at x > 0."""

    lam: float
    rho: float


@dataclass(frozen=True)
class Explicit:
    bits: tuple


@dataclass(frozen=True)
class Palm:
    """``base`` conditioned on a particle at coordinate ``site``."""

    base: Bernoulli | Step
    site: int = 0


InitialMeasure = Bernoulli | Step | Explicit | Palm


def sample_initial(measure, size: int, origin_offset: int, rng: np.random.Generator) -> np.ndarray:
    coords = np.arange(size) + origin_offset
    if isinstance(measure, Bernoulli):
        return (rng.random(size) < measure.alpha).astype(np.uint8)
    if isinstance(measure, Step):
        dens = np.where(coords <= 0, measure.lam, measure.rho)
        return (rng.random(size) < dens).astype(np.uint8)
    if isinstance(measure, Explicit):
        bits = np.asarray(measure.bits, dtype=np.uint8)
        if bits.size != size:
            raise ValueError(f"explicit configuration has {bits.size} sites, lattice has {size}")
        return bits.copy()
    if isinstance(measure, Palm):
        occ = sample_initial(measure.base, size, origin_offset, rng)
        s = measure.site - origin_offset
        if not 0 <= s < size:
            raise ValueError("Palm site outside the lattice")
        occ[s] = 1
        return occ
    raise TypeError(f"unknown initial measure {measure!r}")


# --- elementary moves --------------------------------------------------------


@dataclass(frozen=True)
class PushMove:
    source: int
    extent: int


def first_vacancy(config: Configuration, x: int, k: int) -> int | None:
    """Smallest m in 1..k with site x + m empty, or None if x+1..x+k are all occupied.

    On a segment, sites past the right end count as occupied.
    """
    if not config.occupancy[x]:
        raise ValueError(f"site {x} is empty")
    m = int(_kernels.push_extent(config.occupancy, x, config.ring, k))
    return m or None


def rate_q(config: Configuration, x: int, y: int, k: int) -> int:
    """Jump intensity from x to y: 1 if y is the first vacancy within k steps of x."""
    occ = config.occupancy
    if not occ[x] or occ[y % config.size if config.ring else y]:
        raise ValueError("rate_q needs x occupied and y empty")
    m = first_vacancy(config, x, k)
    if m is None:
        return 0
    target = x + m
    if config.ring:
        return int((y - target) % config.size == 0)
    return int(y == target)


def apply_push(config: Configuration, move: PushMove) -> Configuration:
    """New configuration after ``move``; labels, if tracked, shift one site each."""
    x, m = move.source, move.extent
    L = config.size
    sites = [(x + j) % L if config.ring else x + j for j in range(m + 1)]
    if m < 1 or sites[-1] >= L:
        raise InvalidMoveError(f"push {move} leaves the lattice")
    occ = config.occupancy
    if not all(occ[s] for s in sites[:-1]) or occ[sites[-1]]:
        raise InvalidMoveError(f"push {move} does not match the configuration")
    out = config.copy()
    out.occupancy[sites[0]] = 0
    out.occupancy[sites[-1]] = 1
    if out.labels is not None:
        old = config.labels
        out.labels[sites[0]] = -1
        for a, b in zip(sites[:-1], sites[1:]):
            out.labels[b] = old[a]
    return out


# --- simulation state --------------------------------------------------------


@dataclass(frozen=True)
class EventRecord:
    dt: float
    move: PushMove


class SimState:
    """Mutable state of one Gillespie run.

    Owned by a single thread. Copy the configuration before handing it
    elsewhere.
    """

    def __init__(self, config: Configuration, k: int, rng: np.random.Generator,
                 time: float = 0.0, tagged_site: int | None = None):
        self.config = config
        self.k = k
        self.rng = rng
        self.time = time
        L = config.size
        self._active = np.empty(max(L, 1), dtype=np.int64)
        self._slot = np.empty(max(L, 1), dtype=np.int64)
        self.n_active = int(_kernels.init_active(config.occupancy, config.ring, k, self._active, self._slot))
        self._tag = np.array([-1 if tagged_site is None else tagged_site, 0], dtype=np.int64)
        self.events = 0
        self.deadlocked = self.n_active == 0
        self._empty_f = np.empty(0)
        self._empty_i = np.empty(0, dtype=np.int64)
        self._empty_snaps = np.empty((0, L), dtype=np.uint8)

    @property
    def active_sites(self) -> set[int]:
        return set(self._active[: self.n_active].tolist())

    @property
    def total_rate(self) -> int:
        return self.n_active

    @property
    def tagged_site(self) -> int | None:
        return None if self._tag[0] < 0 else int(self._tag[0])

    @property
    def tagged_displacement(self) -> int:
        return int(self._tag[1])

    def advance(self, t_end: float = math.inf, max_events: int = 2**62, *,
                snapshot_times=None, tag_times=None, tally=None, log=None) -> int:
        """Run until ``t_end`` or ``max_events``. Returns the number of events."""
        L = self.config.size
        snap_times = self._empty_f if snapshot_times is None else np.asarray(snapshot_times, float)
        snaps = self._empty_snaps if snapshot_times is None else np.empty((snap_times.size, L), np.uint8)
        tag_times_a = self._empty_f if tag_times is None else np.asarray(tag_times, float)
        tag_out = np.zeros(tag_times_a.size, dtype=np.int64)
        if tally is None:
            t0, t1, crossings = 0.0, 0.0, self._empty_i
        else:
            t0, t1, crossings = tally.t0, tally.t1, tally.crossings
        if log is None:
            log_t, log_src, log_ext = self._empty_f, self._empty_i, self._empty_i
        else:
            log_t, log_src, log_ext = log
        n, t, ev, dead = _kernels.advance(
            self.config.occupancy, self.config.ring, self.k, self._active, self._slot,
            self.n_active, self.time, t_end, self.rng, max_events,
            snap_times, snaps, self._tag, tag_times_a, tag_out,
            t0, t1, crossings, log_t, log_src, log_ext,
        )
        self.n_active, self.time, self.deadlocked = int(n), float(t), bool(dead)
        self.events += int(ev)
        self._last_snaps, self._last_tags = snaps, tag_out
        return int(ev)

    def step(self) -> EventRecord | None:
        """Perform one event; returns None when no particle can move (deadlock)."""
        if self.n_active == 0:
            self.deadlocked = True
            return None
        log = (np.empty(1), np.empty(1, np.int64), np.empty(1, np.int64))
        t_prev = self.time
        self.advance(max_events=1, log=log)
        return EventRecord(float(log[0][0]) - t_prev, PushMove(int(log[1][0]), int(log[2][0])))


def step(state: SimState) -> EventRecord | None:
    return state.step()


# --- runs --------------------------------------------------------------------


@dataclass
class BondTally:
    """Particles that crossed bond (i, i+1) during [t0, t1)."""

    t0: float
    t1: float
    crossings: np.ndarray
    topology: str = RING


@dataclass
class EventLog:
    times: np.ndarray
    sources: np.ndarray
    extents: np.ndarray
    size: int
    topology: str = RING


@dataclass
class RunResult:
    snapshots: list[Snapshot]
    events: int
    final: Configuration
    deadlocked: bool
    tally: BondTally | None = None
    log: EventLog | None = None
    tagged_times: np.ndarray | None = None
    tagged_positions: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


def auto_segment(region: tuple[float, float], horizon: float, k: int) -> tuple[int, int]:
    """Smallest segment (size, origin_offset) around ``region`` that passes the horizon check."""
    reach = math.ceil(max_speed(k) * horizon + 10.0 * math.sqrt(horizon))
    lo = math.floor(region[0]) - reach
    hi = math.ceil(region[1]) + reach
    return hi - lo + 1, lo


def check_horizon(size: int, origin_offset: int, region: tuple[float, float], horizon: float, k: int):
    """Require v_max * T + 10 sqrt(T) <= distance from ``region`` to each segment end.

    Raises:
        HorizonError: if the segment is too short.
    """
    reach = max_speed(k) * horizon + 10.0 * math.sqrt(horizon)
    left = region[0] - origin_offset
    right = origin_offset + size - 1 - region[1]
    if min(left, right) < reach:
        raise HorizonError(
            f"segment [{origin_offset}, {origin_offset + size - 1}] too short for region {region} "
            f"at horizon {horizon}: need {reach:.1f} sites of margin, have {min(left, right)}"
        )


def run(k: int, topology: str, size: int, measure, snapshot_times: Sequence[float], seed: int,
        *, replica: int = 0, origin_offset: int = 0, region: tuple[float, float] = (0, 0),
        horizon: float | None = None, tally_interval: tuple[float, float] | None = None,
        record_events: int = 0, tagged_coordinate: int | None = None,
        tag_times: Sequence[float] | None = None) -> RunResult:
    """Simulate one replica and return snapshots at ``snapshot_times``.

    Args:
        k: step range.
        topology: ``"ring"`` or ``"segment"``.
        size: number of sites.
        measure: initial measure (:class:`Bernoulli`, :class:`Step`, ...).
        snapshot_times: nondecreasing times. Each snapshot is the
            configuration after the last event at or before that time.
        seed, replica: RNG stream key.
        origin_offset: lattice coordinate of site 0.
        region: measured coordinates, used by the segment horizon check.
        horizon: final time. Defaults to the last requested time.
        tally_interval: count bond crossings during [t0, t1).
        record_events: keep the first ``record_events`` events in an :class:`EventLog`.
        tagged_coordinate: track the particle starting at this coordinate.
        tag_times: times at which to sample the tagged position.

    Raises:
        HorizonError: on a segment too short for ``region`` up to ``horizon``.
    """
    times = np.asarray(snapshot_times, dtype=float)
    if times.size and np.any(np.diff(times) < 0):
        raise ValueError("snapshot times must be nondecreasing")
    ends = [0.0]
    for arr in (times, np.asarray(tag_times if tag_times is not None else [], float)):
        if arr.size:
            ends.append(float(arr.max()))
    if tally_interval is not None:
        ends.append(float(tally_interval[1]))
    T = float(horizon) if horizon is not None else max(ends)
    if topology == SEGMENT:
        check_horizon(size, origin_offset, region, T, k)
    rng = make_rng(seed, replica)
    occ = sample_initial(measure, size, origin_offset, rng)
    config = Configuration(occ, topology, origin_offset)
    tag_site = None
    if tagged_coordinate is not None:
        tag_site = config.site(tagged_coordinate)
        if not occ[tag_site]:
            raise ValueError("no particle at the tagged coordinate")
    state = SimState(config, k, rng, tagged_site=tag_site)
    tally = None
    if tally_interval is not None:
        tally = BondTally(float(tally_interval[0]), float(tally_interval[1]),
                          np.zeros(size, dtype=np.int64), topology)
    log = None
    if record_events:
        log = (np.empty(record_events), np.empty(record_events, np.int64), np.empty(record_events, np.int64))
    state.advance(T, snapshot_times=times, tag_times=tag_times, tally=tally, log=log)
    snaps = [
        Snapshot(float(t), Configuration(state._last_snaps[i], topology, origin_offset))
        for i, t in enumerate(times)
    ]
    event_log = None
    if log is not None:
        n = min(state.events, record_events)
        event_log = EventLog(log[0][:n].copy(), log[1][:n].copy(), log[2][:n].copy(), size, topology)
    result = RunResult(
        snapshots=snaps, events=state.events, final=state.config, deadlocked=state.deadlocked,
        tally=tally, log=event_log,
        metadata={
            "k": k, "topology": topology, "size": size, "origin_offset": origin_offset,
            "seed": seed, "replica": replica, "horizon": T, "events": state.events,
            "rng": RNG_ALGORITHM, "measure": repr(measure),
        },
    )
    if tag_site is not None:
        tt = np.asarray(tag_times if tag_times is not None else [], float)
        result.tagged_times = tt
        result.tagged_positions = tagged_coordinate + state._last_tags
    return result


def map_replicas(func: Callable[[int], object], replicas: int, workers: int | None = None) -> list:
    """Evaluate ``func(r)`` for r in range(replicas); results come back in replica order.

    The compiled kernels release the GIL, so threads run replicas in parallel.
    """
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or replicas <= 1:
        return [func(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=min(workers, replicas)) as pool:
        return list(pool.map(func, range(replicas)))


# --- tagged particle ---------------------------------------------------------


@dataclass
class TaggedTrajectory:
    """Positions (lattice coordinates) of the tagged pushing particle."""

    times: np.ndarray
    positions: np.ndarray
    seed: int
    alpha: float
    replica: int = 0
    k: int = 2
    topology: str = RING
    size: int = 0


def tagged_drift(config: Configuration, x: int) -> int:
    """Instantaneous mean speed of the tagged particle at site x (k = 2 only).

    psi = (1 - eta(x+1)) + eta(x-1)(1 - eta(x+1)) + eta(x+1)(1 - eta(x+2)),
    with sites past a segment end counted as occupied.
    """
    occ = config.occupancy
    if not occ[x]:
        raise ValueError(f"site {x} is empty")

    def eta(s):
        if config.ring:
            return int(occ[s % config.size])
        return int(occ[s]) if 0 <= s < config.size else (0 if s < 0 else 1)

    return (1 - eta(x + 1)) + eta(x - 1) * (1 - eta(x + 1)) + eta(x + 1) * (1 - eta(x + 2))


DEFAULT_TAGGED_RING = 2000


def run_tagged(alpha: float, horizon: float, seed: int, *, k: int = 2, replica: int = 0,
               topology: str = RING, size: int | None = None, samples: int = 100) -> TaggedTrajectory:
    """Trajectory of the tagged particle started at coordinate 0 under Palm(Bernoulli(alpha)).

    On a ring of ``size`` sites (default 2000) the speed is biased by
    O(1/size). On a segment the lattice is sized automatically so that the
    boundaries stay outside the tagged particle's information cone.
    """
    if topology == RING:
        size = size or DEFAULT_TAGGED_RING
        origin = 0
    else:
        auto_size, origin = auto_segment((0, k * horizon), horizon, k)
        size = size or auto_size
    times = np.linspace(0.0, horizon, samples + 1)
    res = run(k, topology, size, Palm(Bernoulli(alpha), 0), [], seed, replica=replica,
              origin_offset=origin, region=(0, k * horizon), horizon=horizon,
              tagged_coordinate=0, tag_times=times)
    return TaggedTrajectory(times, res.tagged_positions, seed, alpha, replica, k, topology, size)


# --- coupling ----------------------------------------------------------------


@dataclass
class CoupledResult:
    times: np.ndarray
    lower: list[Configuration]
    upper: list[Configuration]
    ordered: list[bool]
    violations: int
    events: int

    @property
    def ordered_throughout(self) -> bool:
        return all(self.ordered) and self.violations == 0


def coupled_run(lower: Configuration, upper: Configuration, k: int, seed: int, horizon: float,
                snapshot_times: Sequence[float] | None = None, replica: int = 0) -> CoupledResult:
    """Run two sitewise-ordered configurations with shared per-site clocks.

    Raises:
        ValueError: if the inputs are not ordered or have different geometry.
    """
    if lower.size != upper.size or lower.topology != upper.topology:
        raise ValueError("coupled configurations must share the lattice")
    if np.any(lower.occupancy > upper.occupancy):
        raise ValueError("lower configuration is not below upper")
    times = np.asarray(snapshot_times if snapshot_times is not None else [horizon], float)
    lo, hi = lower.occupancy.copy(), upper.occupancy.copy()
    snaps_lo = np.empty((times.size, lo.size), np.uint8)
    snaps_hi = np.empty_like(snaps_lo)
    ev, bad = _kernels.coupled(lo, hi, lower.ring, k, float(horizon), make_rng(seed, replica),
                               times, snaps_lo, snaps_hi)
    mk = lambda a: Configuration(a, lower.topology, lower.origin_offset)
    return CoupledResult(
        times,
        [mk(s) for s in snaps_lo],
        [mk(s) for s in snaps_hi],
        [bool(np.all(a <= b)) for a, b in zip(snaps_lo, snaps_hi)],
        int(bad),
        int(ev),
    )
