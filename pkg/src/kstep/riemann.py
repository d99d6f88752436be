"""Entropy solutions of u_t + G(u)_x = 0 with step initial data.

Two independent constructions are provided:

* :func:`solve` follows the six-case classification built on the inflection
  point and the star points of the flux.
* :func:`solve_general_envelope` takes the concave (lambda > rho) or convex
  (lambda < rho) hull of G between the two states. Hull pieces that coincide
  with G become rarefaction fans, and straight pieces become jumps.

Both return a :class:`SelfSimilarSolution` in the velocity v = x/t.
"""
from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, fsolve

from .flux import (
    Branch,
    FluxSpec,
    _chord_raw,
    _speed_raw,
    branch_speed_range,
    chord_slope,
    flux,
    flux_derivative,
    inflection,
    inverse_derivative,
    u_lowerstar,
    u_star,
)

NEAR_DEGENERATE = 1e-9
DEGENERATE = "degenerate"


class NearDegenerateWarning(UserWarning):
    """A Riemann state sits within 1e-9 of the inflection point."""


@dataclass(frozen=True)
class RiemannProblem:
    lam: float
    rho: float
    spec: FluxSpec = field(default_factory=FluxSpec)

    def __post_init__(self):
        for name, val in (("lambda", self.lam), ("rho", self.rho)):
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")


@dataclass(frozen=True)
class Segment:
    """A piece of the solution between two breakpoints.

    ``kind`` is ``"constant"`` (value holds the density) or ``"fan"`` (the
    density is the branch inverse of G' at v).
    """

    kind: str
    value: float = math.nan
    branch: Branch | None = None


@dataclass(frozen=True)
class Discontinuity:
    velocity: float
    u_left: float
    u_right: float
    kind: str  # "shock" or "contact"


@dataclass
class SelfSimilarSolution:
    """Piecewise description of v -> u(v, 1).

    Segment ``i`` covers [breakpoints[i-1], breakpoints[i]), so at a jump
    velocity the value is the right limit.
    """

    problem: RiemannProblem
    breakpoints: list[float]
    segments: list[Segment]
    discontinuities: list[Discontinuity]
    case: int | str
    near_degenerate: bool = False

    @property
    def spec(self) -> FluxSpec:
        return self.problem.spec

    def __call__(self, v):
        return _evaluate_v(self, v)

    def to_dict(self) -> dict:
        return {
            "lambda": self.problem.lam,
            "rho": self.problem.rho,
            "k": self.spec.k,
            "case": self.case,
            "near_degenerate": self.near_degenerate,
            "breakpoints": list(self.breakpoints),
            "segments": [
                {"kind": s.kind, "value": s.value if s.kind == "constant" else None,
                 "branch": s.branch.value if s.branch is not None else None}
                for s in self.segments
            ],
            "discontinuities": [
                {"velocity": d.velocity, "u_left": d.u_left, "u_right": d.u_right, "kind": d.kind}
                for d in self.discontinuities
            ],
        }


def _near_degenerate(problem: RiemannProblem, infl: float | None) -> bool:
    if infl is None:
        return False
    return abs(problem.lam - infl) < NEAR_DEGENERATE or abs(problem.rho - infl) < NEAR_DEGENERATE


def classify(problem: RiemannProblem) -> int | str:
    """Case label 1..6 of the entropy solution, or ``"degenerate"`` for lambda == rho.

    States on a case boundary (lambda equal to a star point) are assigned to
    the shock case. A :class:`NearDegenerateWarning` is emitted when a state
    is within 1e-9 of the inflection point.
    """
    lam, rho, spec = problem.lam, problem.rho, problem.spec
    if lam == rho:
        return DEGENERATE
    infl = inflection(spec)
    if _near_degenerate(problem, infl):
        warnings.warn(
            f"Riemann state within {NEAR_DEGENERATE} of the inflection point", NearDegenerateWarning
        )
    if infl is None:
        # concave flux: fan when lambda > rho, shock otherwise
        return 4 if lam > rho else 5
    if lam < rho:
        if rho < infl:
            return 1
        ls = u_lowerstar(spec, rho)
        # a negative lower star cannot exceed lambda
        return 6 if lam < ls else 5
    if rho > infl:
        return 4
    return 3 if lam > u_star(spec, rho) else 2


def solve(problem: RiemannProblem) -> SelfSimilarSolution:
    """Entropy solution assembled from the case formulas."""
    case = classify(problem)
    lam, rho, spec = problem.lam, problem.rho, problem.spec
    near = _near_degenerate(problem, inflection(spec))
    H = lambda u: flux_derivative(spec, u)
    const = lambda u: Segment("constant", value=u)
    if case == DEGENERATE:
        return SelfSimilarSolution(problem, [], [const(lam)], [], case, near)
    if case in (2, 5):
        s = chord_slope(spec, lam, rho)
        return SelfSimilarSolution(
            problem, [s], [const(lam), const(rho)], [Discontinuity(s, lam, rho, "shock")], case, near
        )
    if case in (1, 4):
        branch = Branch.LOWER if case == 1 else Branch.UPPER
        return SelfSimilarSolution(
            problem, [H(lam), H(rho)], [const(lam), Segment("fan", branch=branch), const(rho)],
            [], case, near,
        )
    if case == 3:
        star, branch = u_star(spec, rho), Branch.UPPER
    else:
        star, branch = u_lowerstar(spec, rho), Branch.LOWER
    vc = H(star)
    return SelfSimilarSolution(
        problem, [H(lam), vc], [const(lam), Segment("fan", branch=branch), const(rho)],
        [Discontinuity(vc, star, rho, "contact")], case, near,
    )


def _segment_value(sol: SelfSimilarSolution, idx: int, v: float) -> float:
    seg = sol.segments[idx]
    if seg.kind == "constant":
        return seg.value
    lo, hi = sol.breakpoints[idx - 1], sol.breakpoints[idx]
    v = min(max(v, lo), hi)
    return inverse_derivative(sol.spec, v, seg.branch)


def _evaluate_v(sol: SelfSimilarSolution, v):
    if np.ndim(v) == 0:
        return _segment_value(sol, bisect.bisect_right(sol.breakpoints, float(v)), float(v))
    v = np.asarray(v, dtype=float)
    flat = v.ravel()
    idx = np.searchsorted(np.asarray(sol.breakpoints, dtype=float), flat, side="right")
    out = np.empty(flat.size)
    for i in np.unique(idx):
        sel = idx == i
        seg = sol.segments[i]
        if seg.kind == "constant":
            out[sel] = seg.value
        elif sol.spec.is_k2:
            # closed-form branch inverse, same formula as inverse_derivative
            x = np.clip(flat[sel], sol.breakpoints[i - 1], sol.breakpoints[i])
            lo, hi = branch_speed_range(sol.spec, seg.branch)
            root = np.sqrt(np.maximum(7.0 - 6.0 * np.clip(x, lo, hi), 0.0))
            sign = -1.0 if seg.branch is Branch.LOWER else 1.0
            out[sel] = np.clip((1.0 + sign * root) / 6.0, 0.0, 1.0)
        else:
            out[sel] = [_segment_value(sol, int(i), float(x)) for x in flat[sel]]
    return out.reshape(v.shape)


def evaluate(sol: SelfSimilarSolution, x, t: float):
    """Density u(x, t) = u(x/t, 1).

    Raises:
        ValueError: if t <= 0.
    """
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")
    return _evaluate_v(sol, np.asarray(x, dtype=float) / t if np.ndim(x) else float(x) / t)


def check_rankine_hugoniot(sol: SelfSimilarSolution) -> float:
    """Largest |jump velocity - chord slope| over the discontinuities (0 if none)."""
    res = 0.0
    for d in sol.discontinuities:
        res = max(res, abs(d.velocity - chord_slope(sol.spec, d.u_right, d.u_left)))
    return res


def check_condition_E(sol: SelfSimilarSolution, nsamples: int = 10_000) -> float:
    """Largest value of S[u+; u-] - S[v; u-] over sampled v strictly between u- and u+.

    A result <= 0 means the entropy condition holds at every sample.
    """
    if nsamples < 2:
        raise ValueError("need at least two samples per discontinuity")
    worst = -math.inf
    for d in sol.discontinuities:
        lo, hi = sorted((d.u_left, d.u_right))
        v = np.linspace(lo, hi, nsamples + 2)[1:-1]
        v = v[(v != d.u_left) & (v != d.u_right)]
        if v.size == 0:
            continue
        ref = chord_slope(sol.spec, d.u_right, d.u_left)
        worst = max(worst, float(np.max(ref - chord_slope(sol.spec, v, d.u_left))))
    return worst if worst > -math.inf else 0.0


# --- hull construction -------------------------------------------------------

_HULL_POINTS = 4096


def _hull(u: np.ndarray, g: np.ndarray, upper: bool) -> list[int]:
    """Andrew monotone chain over points sorted by u; collinear points are kept."""
    sign = 1.0 if upper else -1.0
    out: list[int] = []
    for i in range(len(u)):
        while len(out) >= 2:
            o, a = out[-2], out[-1]
            cross = (u[a] - u[o]) * (g[i] - g[o]) - (g[a] - g[o]) * (u[i] - u[o])
            if sign * cross > 0:
                out.pop()
            else:
                break
        out.append(i)
    return out


def _polish_tangent(spec: FluxSpec, anchor: float, guess: float, h: float) -> float:
    """Root of S[anchor; x] - H(x) near ``guess``."""
    f = lambda x: float(_chord_raw(spec, x, anchor) - _speed_raw(spec, x))
    lo, hi = guess - h, guess + h
    for _ in range(60):
        if f(lo) * f(hi) <= 0:
            return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        lo, hi = lo - h, hi + h
    raise RuntimeError("tangency polishing failed to bracket a root")


def _hull_pieces(spec: FluxSpec, a: float, b: float, upper: bool, n: int):
    u = np.linspace(a, b, n + 1)
    g = flux(spec, u)
    idx = _hull(u, g, upper)
    scale = max(1.0, float(np.max(np.abs(g))))
    pieces: list[list] = []  # [kind, u0, u1]
    for i, j in zip(idx[:-1], idx[1:]):
        kind = "curve"
        if j > i + 1:
            chord = g[i] + (g[j] - g[i]) * (u[i + 1 : j] - u[i]) / (u[j] - u[i])
            if np.max(np.abs(chord - g[i + 1 : j])) > 1e-13 * scale:
                kind = "line"
        if pieces and pieces[-1][0] == kind == "curve":
            pieces[-1][2] = u[j]
        else:
            pieces.append([kind, float(u[i]), float(u[j])])
    h = (b - a) / n
    for k, piece in enumerate(pieces):
        if piece[0] != "line":
            continue
        p, q = piece[1], piece[2]
        left_free, right_free = p != a, q != b
        if left_free and right_free:
            sol = fsolve(
                lambda z: [
                    _chord_raw(spec, z[0], z[1]) - _speed_raw(spec, z[0]),
                    _chord_raw(spec, z[0], z[1]) - _speed_raw(spec, z[1]),
                ],
                [p, q],
                xtol=1e-15,
            )
            p, q = float(sol[0]), float(sol[1])
        elif right_free:
            q = _polish_tangent(spec, p, q, h)
        elif left_free:
            p = _polish_tangent(spec, q, p, h)
        piece[1], piece[2] = p, q
        if k > 0:
            pieces[k - 1][2] = p
        if k + 1 < len(pieces):
            pieces[k + 1][1] = q
    return [tuple(p) for p in pieces if p[0] == "line" or p[2] > p[1]]


def solve_general_envelope(problem: RiemannProblem, n_grid: int = _HULL_POINTS) -> SelfSimilarSolution:
    """Entropy solution from the hull of the flux between the two states.

    For lambda > rho the upper concave hull of G on [rho, lambda] is used and
    for lambda < rho the lower convex hull on [lambda, rho]. Hull vertices
    are found on a uniform grid and then polished by tangency root finding.
    """
    lam, rho, spec = problem.lam, problem.rho, problem.spec
    case = classify(problem)
    infl = inflection(spec)
    near = _near_degenerate(problem, infl)
    if case == DEGENERATE:
        return SelfSimilarSolution(problem, [], [Segment("constant", value=lam)], [], case, near)
    upper = lam > rho
    pieces = _hull_pieces(spec, min(lam, rho), max(lam, rho), upper, n_grid)
    # walk from the lambda side toward rho
    if upper:
        pieces = [(kind, u1, u0) for kind, u0, u1 in reversed(pieces)]

    def branch(u0, u1):
        mid = 0.5 * (u0 + u1)
        return Branch.UPPER if infl is None or mid > infl else Branch.LOWER

    bps: list[float] = []
    segs = [Segment("constant", value=lam)]
    discs: list[Discontinuity] = []
    for i, (kind, u0, u1) in enumerate(pieces):
        last = i == len(pieces) - 1
        if kind == "curve":
            if i == 0:
                bps.append(float(_speed_raw(spec, u0)))
            segs.append(Segment("fan", branch=branch(u0, u1)))
            if last:
                bps.append(float(_speed_raw(spec, u1)))
                segs.append(Segment("constant", value=rho))
        else:
            v = float(chord_slope(spec, u1, u0))
            bps.append(v)
            tangent = (i > 0 and pieces[i - 1][0] == "curve") or (
                not last and pieces[i + 1][0] == "curve"
            )
            discs.append(Discontinuity(v, u0, u1, "contact" if tangent else "shock"))
            if last:
                segs.append(Segment("constant", value=rho))
            elif pieces[i + 1][0] == "line":
                segs.append(Segment("constant", value=u1))
    return SelfSimilarSolution(problem, bps, segs, discs, case, near)
