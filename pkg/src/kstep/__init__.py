"""Totally asymmetric k-step exclusion: exact simulation, Riemann solutions, hydrodynamic checks."""

__version__ = "0.1.0"

from .flux import (  # noqa: E402
    Branch,
    FluxSpec,
    chord_slope,
    flux,
    flux_derivative,
    inflection,
    inverse_derivative,
    u_lowerstar,
    u_star,
)
from .riemann import RiemannProblem, SelfSimilarSolution, classify, solve, solve_general_envelope  # noqa: E402

__all__ = [
    "Branch",
    "FluxSpec",
    "RiemannProblem",
    "SelfSimilarSolution",
    "chord_slope",
    "classify",
    "flux",
    "flux_derivative",
    "inflection",
    "inverse_derivative",
    "solve",
    "solve_general_envelope",
    "u_lowerstar",
    "u_star",
]
