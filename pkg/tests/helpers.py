"""Shared samplers for the test modules."""
import numpy as np

from kstep.flux import FluxSpec
from kstep.riemann import RiemannProblem, classify

INFL = 1 / 6


def random_pairs(case: int, n: int, rng: np.random.Generator, margin: float = 1e-6):
    """n uniform (lam, rho) pairs of the given case, kept away from the inflection."""
    out = []
    while len(out) < n:
        lam, rho = rng.random(2)
        if min(abs(lam - INFL), abs(rho - INFL)) < margin or abs(lam - rho) < margin:
            continue
        if classify(RiemannProblem(lam, rho, FluxSpec(2))) == case:
            out.append((float(lam), float(rho)))
    return out


def velocity_grid(sol, n: int = 1000, margin: float = 0.5):
    bps = sol.breakpoints or [0.0]
    return np.linspace(min(bps) - margin, max(bps) + margin, n)
