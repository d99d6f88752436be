import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from kstep.flux import Branch, FluxSpec, flux, flux_derivative
from kstep.riemann import (
    DEGENERATE, Discontinuity, NearDegenerateWarning, RiemannProblem, Segment,
    SelfSimilarSolution, check_condition_E, check_rankine_hugoniot, classify, evaluate,
    solve, solve_general_envelope,
)

from helpers import random_pairs, velocity_grid

K2 = FluxSpec(2)


def P(lam, rho, k=2):
    return RiemannProblem(lam, rho, FluxSpec(k))


CANONICAL = [((0.05, 0.1), 1), ((0.2, 0.05), 2), ((0.5, 0.05), 3),
             ((0.6, 0.3), 4), ((0.3, 0.7), 5), ((0.01, 0.45), 6)]


@pytest.mark.parametrize("pair,case", CANONICAL)
def test_canonical_classification(pair, case):
    assert classify(P(*pair)) == case


def test_degenerate_and_boundaries():
    assert classify(P(0.3, 0.3)) == DEGENERATE
    # lam equal to rho* = 0.225 sits on the case 2/3 boundary and counts as a shock
    assert classify(P(0.225, 0.05)) == 2
    # lam equal to rho_* = 0.025 for rho = 0.45
    assert classify(P(0.025, 0.45)) == 5


def test_near_degenerate_warning():
    with pytest.warns(NearDegenerateWarning):
        sol = solve(P(1 / 6 + 1e-11, 0.05))
    assert sol.near_degenerate


def test_invalid_densities():
    with pytest.raises(ValueError):
        P(1.2, 0.1)


def test_case3_structure():
    sol = solve(P(0.5, 0.05))
    assert sol.case == 3
    assert sol.breakpoints == pytest.approx([0.5, 1.14625], abs=1e-14)
    assert [s.kind for s in sol.segments] == ["constant", "fan", "constant"]
    assert sol.segments[1].branch is Branch.UPPER
    (d,) = sol.discontinuities
    assert d.kind == "contact"
    assert d.velocity == pytest.approx(1.14625, abs=1e-14)
    assert d.u_left == pytest.approx(0.225, abs=1e-15) and d.u_right == 0.05


def test_case2_shock_and_right_limit():
    sol = solve(P(0.2, 0.05))
    (d,) = sol.discontinuities
    assert d.kind == "shock" and d.velocity == pytest.approx(1.145, abs=1e-14)
    assert sol(d.velocity) == 0.05
    assert sol(d.velocity - 1e-9) == 0.2


def test_constant_and_case5():
    sol = solve(P(0.3, 0.3))
    assert sol.discontinuities == [] and sol(-3.0) == sol(5.0) == 0.3
    sol = solve(P(0.3, 0.7))
    assert sol.case == 5
    assert sol.discontinuities[0].velocity == pytest.approx(0.42, abs=1e-14)


def test_evaluate_examples():
    sol = solve(P(0.5, 0.05))
    assert evaluate(sol, 0.8 * 1000, 1000) == pytest.approx((1 + math.sqrt(2.2)) / 6, abs=1e-14)
    assert evaluate(sol, -50.0, 10.0) == 0.5
    assert evaluate(solve(P(0.2, 0.05)), 1.145, 1.0) == 0.05
    with pytest.raises(ValueError):
        evaluate(sol, 1.0, 0.0)


def test_fan_values_are_branch_inverses():
    sol = solve(P(0.6, 0.3))
    for v in np.linspace(sol.breakpoints[0], sol.breakpoints[1], 50)[1:-1]:
        assert flux_derivative(K2, sol(v)) == pytest.approx(v, abs=1e-12)


def test_rankine_hugoniot_examples():
    bad = SelfSimilarSolution(P(0.5, 0.05), [1.0], [Segment("constant", 0.5), Segment("constant", 0.05)],
                              [Discontinuity(1.0, 0.5, 0.05, "shock")], 3)
    # S[0.5;0.05] = (G(0.5) - G(0.05)) / 0.45 = (0.5 - 0.05225)/0.45
    assert check_rankine_hugoniot(bad) == pytest.approx(abs(1.0 - 0.44775 / 0.45), abs=1e-14)
    assert check_rankine_hugoniot(solve(P(0.3, 0.3))) == 0.0
    assert check_rankine_hugoniot(solve(P(0.5, 0.05))) <= 1e-12


def test_condition_E_examples():
    assert check_condition_E(solve(P(0.2, 0.05))) <= 1e-12
    assert check_condition_E(solve(P(0.5, 0.05))) <= 1e-12
    # a single jump from 0.5 down to 0.05 at chord speed is not admissible:
    # the chord from 0.5 passes above G near 0.225
    s = (flux(K2, 0.5) - flux(K2, 0.05)) / 0.45
    bad = SelfSimilarSolution(P(0.5, 0.05), [s], [Segment("constant", 0.5), Segment("constant", 0.05)],
                              [Discontinuity(s, 0.5, 0.05, "shock")], 3)
    assert check_condition_E(bad) > 0
    # the same pair in the opposite order is the entropy shock of case 5
    ok = solve(P(0.05, 0.5))
    assert ok.case == 5 and check_condition_E(ok) <= 1e-12
    with pytest.raises(ValueError):
        check_condition_E(bad, nsamples=1)


def test_envelope_matches_solve_on_canonical_cases():
    for (lam, rho), _ in CANONICAL:
        a, b = solve(P(lam, rho)), solve_general_envelope(P(lam, rho))
        v = velocity_grid(a)
        assert np.max(np.abs(a(v) - b(v))) <= 1e-10
        assert len(a.discontinuities) == len(b.discontinuities)


def test_envelope_constant_and_k3():
    sol = solve_general_envelope(P(0.4, 0.4))
    assert sol.discontinuities == [] and sol(0.0) == 0.4
    sol = solve_general_envelope(P(0.9, 0.02, k=3))
    assert check_rankine_hugoniot(sol) <= 1e-10
    assert check_condition_E(sol) <= 1e-10


def test_envelope_agrees_on_random_pairs():
    rng = np.random.default_rng(11)
    for lam, rho in rng.random((100, 2)):
        if min(abs(lam - 1 / 6), abs(rho - 1 / 6)) < 1e-6:
            continue
        a, b = solve(P(lam, rho)), solve_general_envelope(P(lam, rho))
        v = velocity_grid(a)
        assert np.max(np.abs(a(v) - b(v))) <= 1e-10, (lam, rho)


def test_k1_concave():
    assert classify(P(0.7, 0.2, k=1)) == 4
    assert classify(P(0.2, 0.7, k=1)) == 5
    sol = solve(P(0.2, 0.7, k=1))
    assert sol.discontinuities[0].velocity == pytest.approx(0.1, abs=1e-14)


def test_to_dict_round_trip_fields():
    d = solve(P(0.5, 0.05)).to_dict()
    assert d["case"] == 3 and d["discontinuities"][0]["kind"] == "contact"
    assert d["segments"][1] == {"kind": "fan", "value": None, "branch": "upper"}


# --- properties --------------------------------------------------------------

density = st.floats(0, 1).filter(lambda u: abs(u - 1 / 6) > 1e-6)


@settings(max_examples=60, deadline=None)
@given(density, density, st.floats(-4, 4), st.floats(0.01, 100), st.floats(0.01, 100))
def test_self_similar_and_in_range(lam, rho, v, t, c):
    sol = solve(P(lam, rho))
    x = v * t
    assert evaluate(sol, x, t) == evaluate(sol, c * x, c * t) or abs(
        evaluate(sol, x, t) - evaluate(sol, c * x, c * t)) <= 1e-15 or _near_jump(sol, v)
    u = evaluate(sol, x, t)
    assert min(lam, rho) - 1e-15 <= u <= max(lam, rho) + 1e-15


def _near_jump(sol, v):
    # x*c/(t*c) may round to the other side of a breakpoint
    return any(abs(v - b) < 1e-12 for b in sol.breakpoints)


@settings(max_examples=40, deadline=None)
@given(density, density)
def test_conservation_integral(lam, rho):
    sol = solve(P(lam, rho))
    bps = sol.breakpoints or [0.0]
    a, b = min(bps) - 1.0, max(bps) + 1.0
    pts = [p for p in bps if a < p < b]
    integral, _ = quad(lambda v: float(sol(v)), a, b, points=pts or None, epsabs=1e-12, epsrel=1e-12, limit=200)
    expected = b * rho - a * lam - flux(K2, rho) + flux(K2, lam)
    assert integral == pytest.approx(expected, abs=1e-8)


def test_case1_monotone_and_case3_single_contact():
    rng = np.random.default_rng(5)
    for lam, rho in random_pairs(1, 20, rng):
        vals = solve(P(lam, rho))(np.linspace(-1, 3, 400))
        assert np.all(np.diff(vals) >= -1e-15)
    for lam, rho in random_pairs(3, 20, rng):
        sol = solve(P(lam, rho))
        vals = sol(np.linspace(-1, 4, 800))
        # fan on the upper branch followed by a downward contact jump
        assert np.all(np.diff(vals) <= 1e-15)
        assert len(sol.discontinuities) == 1 and sol.discontinuities[0].kind == "contact"
        assert flux_derivative(K2, lam) < sol.discontinuities[0].velocity
