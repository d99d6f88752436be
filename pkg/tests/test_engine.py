import itertools
import math

import numpy as np
import pytest
from scipy import stats

from kstep.engine import (
    RING, SEGMENT, Bernoulli, Configuration, Explicit, HorizonError, InvalidMoveError, Palm,
    PushMove, SimState, Step, apply_push, auto_segment, check_horizon, coupled_run,
    first_vacancy, make_rng, map_replicas, rate_q, run, run_tagged, sample_initial, step,
    tagged_drift,
)
from kstep.measurement import ring_rate_matrix


def cfg(bits, topology=RING, labelled=False):
    return Configuration.from_bits(bits, topology, labelled=labelled)


# --- moves -------------------------------------------------------------------


def test_first_vacancy_examples():
    assert first_vacancy(cfg([1, 0, 1, 1]), 0, 2) == 1
    assert first_vacancy(cfg([1, 1, 0, 0]), 0, 2) == 2
    assert first_vacancy(cfg([1, 1, 1, 0]), 0, 2) is None
    assert first_vacancy(cfg([1, 1, 1, 0]), 0, 3) == 3
    with pytest.raises(ValueError):
        first_vacancy(cfg([0, 1]), 0, 2)


def test_first_vacancy_wraps_on_ring_but_not_segment():
    assert first_vacancy(cfg([0, 1, 1]), 2, 2) == 1
    assert first_vacancy(cfg([0, 1, 1], SEGMENT), 2, 2) is None
    assert first_vacancy(cfg([0, 1, 1], SEGMENT), 1, 2) is None


def test_rate_q_examples():
    assert rate_q(cfg([1, 0, 0, 0]), 0, 1, 2) == 1
    assert rate_q(cfg([1, 1, 0, 0]), 0, 2, 2) == 1
    assert rate_q(cfg([1, 1, 1, 0, 0]), 0, 3, 2) == 0
    assert rate_q(cfg([1, 0, 0, 0, 0]), 0, 3, 2) == 0
    with pytest.raises(ValueError):
        rate_q(cfg([1, 1, 0]), 0, 1, 2)


def test_apply_push_examples():
    assert apply_push(cfg([1, 0, 0]), PushMove(0, 1)).occupancy.tolist() == [0, 1, 0]
    assert apply_push(cfg([1, 1, 0]), PushMove(0, 2)).occupancy.tolist() == [0, 1, 1]
    with pytest.raises(InvalidMoveError):
        apply_push(cfg([1, 0, 0]), PushMove(0, 2))
    with pytest.raises(InvalidMoveError):
        apply_push(cfg([0, 1, 1], SEGMENT), PushMove(1, 2))


def test_apply_push_shifts_labels():
    c = cfg([1, 1, 0, 1], labelled=True)
    out = apply_push(c, PushMove(0, 2))
    assert out.labels.tolist() == [-1, 0, 1, 2]
    assert c.labels.tolist() == [0, 1, -1, 2]  # input untouched


def test_labels_never_cross():
    rng = np.random.default_rng(0)
    c = cfg((rng.random(20) < 0.6).astype(int), labelled=True)
    n = c.n_particles
    for _ in range(2000):
        occ = np.nonzero(c.occupancy)[0]
        x = int(rng.choice(occ))
        m = first_vacancy(c, x, 3)
        if m is None:
            continue
        c = apply_push(c, PushMove(x, m))
        seq = c.labels[c.labels >= 0]
        # cyclic order is preserved: some rotation of the labels is sorted
        r = int(np.argmin(seq))
        assert np.array_equal(np.roll(seq, -r), np.arange(n))


# --- stepping ------------------------------------------------------------------


def test_single_particle_on_empty_ring():
    occ = np.zeros(50, np.uint8)
    occ[0] = 1
    s = SimState(Configuration(occ), 2, make_rng(1))
    dts = []
    for i in range(4000):
        ev = step(s)
        assert ev.move.extent == 1 and ev.move.source == i % 50
        dts.append(ev.dt)
    assert np.mean(dts) == pytest.approx(1.0, abs=4 * 1 / math.sqrt(4000))


def test_full_ring_deadlocks():
    s = SimState(cfg([1] * 8), 2, make_rng(0))
    assert s.total_rate == 0
    assert s.step() is None and s.deadlocked


def test_two_adjacent_particles_both_active():
    s = SimState(cfg([1, 1, 0, 0, 0, 0]), 2, make_rng(0))
    assert s.active_sites == {0, 1} and s.total_rate == 2
    s1 = SimState(cfg([1, 1, 0, 0, 0, 0]), 1, make_rng(0))
    assert s1.active_sites == {1}


@pytest.mark.parametrize("topology", [RING, SEGMENT])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_active_set_matches_recomputation(topology, k):
    rng = np.random.default_rng(k)
    c = Configuration((rng.random(30) < 0.55).astype(np.uint8), topology)
    s = SimState(c, k, make_rng(k))
    n0 = c.n_particles
    for _ in range(3000):
        if s.step() is None:
            break
        occ = s.config.occupancy
        expected = {x for x in np.nonzero(occ)[0].tolist() if first_vacancy(s.config, x, k)}
        assert s.active_sites == expected
        assert s.total_rate == len(expected)
        assert s.config.n_particles == n0


def test_rates_match_exact_generator():
    """Transitions and holding times on the L=6, n=3 ring against the exact rate matrix."""
    L, k, n = 6, 2, 3
    states, Q = ring_rate_matrix(L, k, n)
    index = {st.tobytes(): i for i, st in enumerate(states)}
    s = SimState(Configuration(states[0].copy()), k, make_rng(2024))
    N = 100_000
    trans = np.zeros_like(Q)
    scaled = np.empty(N)
    i = 0
    for e in range(N):
        rate = s.total_rate
        assert rate == -Q[i, i]
        ev = s.step()
        j = index[s.config.occupancy.tobytes()]
        trans[i, j] += 1
        scaled[e] = ev.dt * rate
        i = j
    chi2, dof = 0.0, 0
    for a in range(len(states)):
        out = trans[a].sum()
        if out == 0:
            continue
        targets = np.nonzero(Q[a] > 0)[0]
        exp = out * Q[a, targets] / -Q[a, a]
        assert trans[a].sum() == trans[a, targets].sum()  # no impossible jumps
        chi2 += float(np.sum((trans[a, targets] - exp) ** 2 / exp))
        dof += len(targets) - 1
    assert stats.chi2.sf(chi2, dof) > 1e-3
    edges = stats.expon.ppf(np.linspace(0, 1, 21))
    counts, _ = np.histogram(scaled, edges)
    chi2_t = float(np.sum((counts - N / 20) ** 2 / (N / 20)))
    assert stats.chi2.sf(chi2_t, 19) > 1e-3


# --- runs --------------------------------------------------------------------


def test_horizon_zero_returns_initial():
    res = run(2, RING, 40, Bernoulli(0.5), [0.0], seed=3)
    init = sample_initial(Bernoulli(0.5), 40, 0, make_rng(3))
    assert np.array_equal(res.snapshots[0].config.occupancy, init)
    assert res.events == 0


def test_determinism_and_replica_streams():
    a = run(2, RING, 200, Bernoulli(0.4), [5.0, 10.0], seed=9)
    b = run(2, RING, 200, Bernoulli(0.4), [5.0, 10.0], seed=9)
    c = run(2, RING, 200, Bernoulli(0.4), [5.0, 10.0], seed=9, replica=1)
    for x, y in zip(a.snapshots, b.snapshots):
        assert np.array_equal(x.config.occupancy, y.config.occupancy)
    assert a.events == b.events
    assert not np.array_equal(a.snapshots[1].config.occupancy, c.snapshots[1].config.occupancy)


def test_conservation_ring_and_segment():
    res = run(2, RING, 300, Bernoulli(0.3), np.linspace(0, 20, 6), seed=1)
    assert len({s.config.n_particles for s in res.snapshots}) == 1
    size, origin = auto_segment((-10, 10), 20.0, 2)
    res = run(2, SEGMENT, size, Step(0.6, 0.2), np.linspace(0, 20, 6), seed=1,
              origin_offset=origin, region=(-10, 10))
    assert len({s.config.n_particles for s in res.snapshots}) == 1


def test_snapshot_is_state_before_next_event():
    res = run(2, RING, 50, Bernoulli(0.5), [3.0], seed=4, record_events=100_000)
    log = res.log
    before = log.times <= 3.0
    occ = sample_initial(Bernoulli(0.5), 50, 0, make_rng(4))
    c = Configuration(occ)
    for x, m in zip(log.sources[before], log.extents[before]):
        c = apply_push(c, PushMove(int(x), int(m)))
    assert np.array_equal(c.occupancy, res.snapshots[0].config.occupancy)


def test_horizon_check():
    size, origin = auto_segment((0, 0), 100.0, 2)
    assert size == 2 * (300 + 100) + 1 and origin == -400
    check_horizon(size, origin, (0, 0), 100.0, 2)
    with pytest.raises(HorizonError):
        run(2, SEGMENT, 100, Step(0.5, 0.1), [100.0], seed=0, origin_offset=-50)


def test_measures():
    rng = make_rng(0)
    occ = sample_initial(Step(1.0, 0.0), 10, -5, rng)
    assert occ.tolist() == [1] * 6 + [0] * 4
    assert sample_initial(Explicit((1, 0, 1)), 3, 0, rng).tolist() == [1, 0, 1]
    assert sample_initial(Palm(Bernoulli(0.0), 2), 5, 0, rng).tolist() == [0, 0, 1, 0, 0]
    with pytest.raises(ValueError):
        sample_initial(Explicit((1, 0)), 3, 0, rng)


def test_map_replicas_order():
    assert map_replicas(lambda r: r * r, 7, workers=3) == [0, 1, 4, 9, 16, 25, 36]


# --- tagged particle ---------------------------------------------------------


def test_tagged_drift_examples():
    assert tagged_drift(cfg([1, 1, 0, 0, 0]), 1) == 2
    assert tagged_drift(cfg([0, 1, 1, 1, 0]), 1) == 0
    with pytest.raises(ValueError):
        tagged_drift(cfg([0, 1, 0]), 0)


def test_tagged_drift_bernoulli_expectation():
    # exact average over the neighbours x-1, x+1, x+2
    for alpha in (0.0, 0.1, 0.25, 0.5, 0.9):
        total = 0.0
        for a, b, c in itertools.product((0, 1), repeat=3):
            p = np.prod([alpha if s else 1 - alpha for s in (a, b, c)])
            total += p * tagged_drift(cfg([a, 1, b, c, 0, 0]), 1)
        assert total == pytest.approx((1 - alpha) * (1 + 2 * alpha), abs=1e-15)


def test_run_tagged_empty_lattice():
    trajs = [run_tagged(0.0, 1000.0, 5, replica=r) for r in range(4)]
    for tr in trajs:
        assert tr.positions[0] == 0
        assert np.all(np.diff(tr.positions) >= 0)
    speed = np.mean([tr.positions[-1] / 1000.0 for tr in trajs])
    assert speed == pytest.approx(1.0, abs=4 / math.sqrt(4000))


def test_run_tagged_tracks_pushes():
    # on a dense ring the tagged particle is moved by pushes from behind as well
    tr = run_tagged(0.5, 200.0, 1, size=400)
    assert tr.positions[-1] > 0 and np.all(np.diff(tr.positions) >= 0)


# --- coupling ----------------------------------------------------------------


def test_coupled_identical_and_empty():
    rng = np.random.default_rng(0)
    a = Configuration((rng.random(64) < 0.5).astype(np.uint8))
    res = coupled_run(a, a.copy(), 2, 1, 50.0, np.linspace(5, 50, 10))
    for x, y in zip(res.lower, res.upper):
        assert np.array_equal(x.occupancy, y.occupancy)
    empty = Configuration(np.zeros(64, np.uint8))
    res = coupled_run(empty, a, 2, 1, 50.0, np.linspace(5, 50, 10))
    assert res.ordered_throughout
    assert all(c.n_particles == 0 for c in res.lower)


def test_coupled_ordered_pairs_small():
    rng = np.random.default_rng(1)
    for trial in range(20):
        u = rng.random(32)
        lo = Configuration((u < 0.3).astype(np.uint8))
        hi = Configuration((u < 0.6).astype(np.uint8))
        res = coupled_run(lo, hi, 2, trial, 100.0, np.linspace(10, 100, 10))
        assert res.ordered_throughout


def test_coupled_rejects_unordered():
    with pytest.raises(ValueError):
        coupled_run(cfg([1, 0]), cfg([0, 1]), 2, 0, 1.0)
