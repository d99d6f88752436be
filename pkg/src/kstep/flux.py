"""Flux function of the totally asymmetric k-step exclusion process and its geometry.

Every flux handled here is a polynomial in the density, so all evaluation goes
through ascending coefficient arrays and Horner's rule.  Chord slopes use the
polynomial divided difference, which stays accurate when the two densities
are close.

k = 2 has closed forms for the inflection point, the star points and the
branch inverses of G'. They are used directly; every other flux falls back to
bracketed root finding.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

DOMAIN_TOL = 1e-12
_SCAN_POINTS = 10_000

TOTALLY_ASYMMETRIC = "totally-asymmetric"
NN_ASYMMETRIC_K5 = "nn-asymmetric-k5"


class DomainError(ValueError):
    """A density or speed lies outside the range where the operation is defined."""


class Branch(str, enum.Enum):
    """Monotone branch of G': densities below or above the inflection point."""

    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class FluxSpec:
    """A member of the k-step flux family.

    Attributes:
        k: step range, at least 1.
        variant: ``"totally-asymmetric"`` (any k) or ``"nn-asymmetric-k5"``
            (k must be 5, nearest-neighbour rates p to the right, q = 1 - p to
            the left).
        p: right jump probability, used by the nearest-neighbour variant only.
    """

    k: int = 2
    variant: str = TOTALLY_ASYMMETRIC
    p: float = 1.0
    coeffs: np.ndarray = field(init=False, repr=False, compare=False)
    dcoeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.variant == TOTALLY_ASYMMETRIC:
            c = _tasep_coeffs(self.k)
        elif self.variant == NN_ASYMMETRIC_K5:
            if self.k != 5:
                raise ValueError("the nearest-neighbour flux is only known for k = 5")
            c = _k5_pq_coeffs(self.p, 1.0 - self.p)
        else:
            raise ValueError(f"unknown flux variant {self.variant!r}")
        d = P.polyder(c)
        for arr in (c, d):
            arr.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "dcoeffs", d)

    @property
    def is_k2(self) -> bool:
        return self.variant == TOTALLY_ASYMMETRIC and self.k == 2

    @property
    def max_speed(self) -> float:
        """Largest characteristic speed magnitude on [0, 1]."""
        u = np.linspace(0.0, 1.0, 2001)
        return float(np.max(np.abs(P.polyval(u, self.dcoeffs))))


def _tasep_coeffs(k: int) -> np.ndarray:
    # sum_{j<=k} j u^j (1-u) = u + u^2 + ... + u^k - k u^{k+1}
    c = np.zeros(k + 2)
    c[1 : k + 1] = 1.0
    c[k + 1] = -float(k)
    return c


def _k5_pq_coeffs(p: float, q: float) -> np.ndarray:
    pq = p * q
    bracket = (p - q) * np.array(
        [1.0, 2.0, 3.0 * (1 - pq), 4.0 * (1 - 2 * pq), 5.0 * (1 - 3 * pq + pq * pq)]
    )
    bracket = bracket + np.array([0.0, 0.0, 6.0 * p**4 * q, 0.0, 0.0])
    return P.polymul([0.0, 1.0, -1.0], bracket)


def _check_density(u, lo: float = 0.0, hi: float = 1.0):
    a = np.asarray(u, dtype=float)
    if np.any(a < lo - DOMAIN_TOL) or np.any(a > hi + DOMAIN_TOL) or np.any(np.isnan(a)):
        raise DomainError(f"density outside [{lo}, {hi}]: {u!r}")
    a = np.clip(a, lo, hi)
    return float(a) if a.ndim == 0 else a


def flux(spec: FluxSpec, u):
    """Flux G(u). Accepts scalars or arrays of densities in [0, 1]."""
    u = _check_density(u)
    return _as_out(P.polyval(u, spec.coeffs))


def flux_derivative(spec: FluxSpec, u):
    """Characteristic speed H(u) = G'(u)."""
    u = _check_density(u)
    return _as_out(P.polyval(u, spec.dcoeffs))


def flux_second_derivative(spec: FluxSpec, u):
    u = _check_density(u)
    return _as_out(P.polyval(u, P.polyder(spec.coeffs, 2)))


def _as_out(x):
    return float(x) if np.ndim(x) == 0 else x


def _speed_raw(spec: FluxSpec, u):
    # unchecked evaluation, also valid outside [0, 1]
    return P.polyval(u, spec.dcoeffs)


@functools.lru_cache(maxsize=64)
def inflection(spec: FluxSpec) -> float | None:
    """Unique zero of G'' in (0, 1), or ``None`` when G is concave (k = 1).

    Raises:
        ValueError: if G'' changes sign more than once in (0, 1).
    """
    if spec.is_k2:
        return 1.0 / 6.0
    c2 = P.polyder(spec.coeffs, 2)
    grid = np.linspace(0.0, 1.0, _SCAN_POINTS + 1)
    vals = P.polyval(grid, c2)
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if len(idx) == 0:
        return None
    if len(idx) > 1:
        raise ValueError("flux has more than one inflection point in (0, 1)")
    a, b = grid[idx[0]], grid[idx[0] + 1]
    fa = P.polyval(a, c2)
    while b - a > 1e-14:
        m = 0.5 * (a + b)
        fm = P.polyval(m, c2)
        if fm == 0.0:
            return float(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return float(0.5 * (a + b))


def branch_of(spec: FluxSpec, u: float) -> Branch:
    infl = inflection(spec)
    if infl is None or u > infl:
        return Branch.UPPER
    return Branch.LOWER


def _divided_difference_coeffs(coeffs: np.ndarray, w: float) -> np.ndarray:
    """Coefficients in v of (G(w) - G(v)) / (w - v)."""
    n = len(coeffs)
    out = np.zeros(max(n - 1, 1))
    # coefficient of v^i is sum_{j>i} c_j w^{j-1-i}; accumulate with Horner in w
    acc = 0.0
    for i in range(n - 2, -1, -1):
        acc = acc * w + coeffs[i + 1]
        out[i] = acc
    return out


def chord_slope(spec: FluxSpec, v, w):
    """S[v; w] = (G(w) - G(v)) / (w - v), evaluated without cancellation.

    ``v`` may be an array; ``w`` is a scalar.

    Raises:
        ValueError: when v == w.
    """
    v = _check_density(v)
    w = _check_density(w)
    if np.any(np.asarray(v) == w):
        raise ValueError("chord slope needs two distinct densities")
    return _as_out(P.polyval(v, _divided_difference_coeffs(spec.coeffs, w)))


def _chord_raw(spec: FluxSpec, v, w):
    return P.polyval(v, _divided_difference_coeffs(spec.coeffs, w))


def _tangency_poly(spec: FluxSpec, u: float) -> np.ndarray:
    """(S[v; u] - H(v)) / (v - u) as a polynomial in v."""
    diff = P.polysub(_divided_difference_coeffs(spec.coeffs, u), spec.dcoeffs)
    quot, _ = P.polydiv(diff, [-u, 1.0])
    return quot


def _scan_root(poly: np.ndarray, grid: np.ndarray, pick: str) -> float:
    vals = P.polyval(grid, poly)
    zero = np.nonzero(vals == 0.0)[0]
    change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    cands = [float(grid[i]) for i in zero]
    f = lambda x: P.polyval(x, poly)
    for i in change:
        cands.append(brentq(f, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    if not cands:
        return math.nan
    return min(cands) if pick == "min" else max(cands)


def u_star(spec: FluxSpec, u: float) -> float:
    """Upper star point of a density below the inflection.

    This is the point where the chord from ``u`` becomes tangent to G on the
    concave side, i.e. S[u; u*] = H(u*). For k = 2 it equals (1 - 2u)/4.
    Returns ``inf`` if there is no tangency inside (u, 1].

    Raises:
        DomainError: if ``u`` is not below the inflection point.
    """
    u = _check_density(u)
    infl = inflection(spec)
    if infl is None or u >= infl:
        raise DomainError(f"u_star needs u below the inflection point, got {u}")
    if spec.is_k2:
        return (1.0 - 2.0 * u) / 4.0
    grid = np.linspace(u, 1.0, _SCAN_POINTS + 1)
    root = _scan_root(_tangency_poly(spec, u), grid, "min")
    return math.inf if math.isnan(root) or root <= u else root


def u_lowerstar(spec: FluxSpec, u: float) -> float:
    """Lower star point of a density above the inflection.

    Mirror of :func:`u_star`: the point below ``u`` where the chord from ``u``
    touches G on the convex side. The result is not clamped and can be
    negative (k = 2 with u > 1/2); callers treat a negative value as "no
    density in [0, 1] lies below it".

    Raises:
        DomainError: if ``u`` is not above the inflection point.
    """
    u = _check_density(u)
    infl = inflection(spec)
    if infl is None or u <= infl:
        raise DomainError(f"u_lowerstar needs u above the inflection point, got {u}")
    if spec.is_k2:
        return (1.0 - 2.0 * u) / 4.0
    grid = np.linspace(-1.0, u, _SCAN_POINTS + 1)
    root = _scan_root(_tangency_poly(spec, u), grid, "max")
    return -math.inf if math.isnan(root) or root >= u else root


def branch_speed_range(spec: FluxSpec, branch: Branch) -> tuple[float, float]:
    """(min, max) of H over the densities of ``branch``."""
    infl = inflection(spec)
    if infl is None:
        lo_u, hi_u = (0.0, 0.0) if branch is Branch.LOWER else (0.0, 1.0)
    elif branch is Branch.LOWER:
        lo_u, hi_u = 0.0, infl
    else:
        lo_u, hi_u = infl, 1.0
    a, b = float(_speed_raw(spec, lo_u)), float(_speed_raw(spec, hi_u))
    return min(a, b), max(a, b)


def inverse_derivative(spec: FluxSpec, x: float, branch: Branch | str) -> float:
    """Density u on ``branch`` with H(u) = x.

    Raises:
        DomainError: if ``x`` is not attained on the branch.
    """
    branch = Branch(branch)
    infl = inflection(spec)
    if infl is None and branch is Branch.LOWER:
        raise DomainError("flux has no lower branch")
    lo, hi = branch_speed_range(spec, branch)
    if x < lo - DOMAIN_TOL or x > hi + DOMAIN_TOL:
        raise DomainError(f"speed {x} not attained on the {branch.value} branch [{lo}, {hi}]")
    x = min(max(x, lo), hi)
    if spec.is_k2:
        root = math.sqrt(max(7.0 - 6.0 * x, 0.0))
        u = (1.0 - root) / 6.0 if branch is Branch.LOWER else (1.0 + root) / 6.0
        return min(max(u, 0.0), 1.0)
    if branch is Branch.LOWER:
        a, b = 0.0, infl
    else:
        a, b = (infl if infl is not None else 0.0), 1.0
    # H increases on the lower branch and decreases on the upper one
    sign = 1.0 if branch is Branch.LOWER else -1.0
    while b - a > 1e-13:
        m = 0.5 * (a + b)
        if sign * (_speed_raw(spec, m) - x) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def flux_k5_pq(p: float, q: float, u):
    """Flux of the nearest-neighbour asymmetric 5-step exclusion with rates p, q."""
    if abs(p + q - 1.0) > DOMAIN_TOL or not p > q:
        raise DomainError(f"need p + q = 1 and p > q, got p={p}, q={q}")
    u = _check_density(u)
    return _as_out(P.polyval(u, _k5_pq_coeffs(p, q)))


def flux_limit_check(u: float, k: int) -> tuple[float, float]:
    """Return (G_k(u), u / (1 - u)), the latter being the k -> infinity flux."""
    if u >= 1.0:
        raise DomainError("the k = infinity flux is singular at u = 1")
    return flux(FluxSpec(k), u), u / (1.0 - u)
