"""Coupled-cluster variants for the single-shell pairing model, checked against exact diagonalization."""

from __future__ import annotations

from .functional import AmplitudeVector, Gauge, Observables, Scheme, SchemeConfig, evaluate, residuals
from .oracle import exact_ground_energy, exact_spectrum, interpolated_exact_energy
from .quasispin import ModelParams
from .rpa import RpaSpectrum, rpa_at
from .solver import (
    Branch,
    SolutionPoint,
    SolverSettings,
    certify_no_solution,
    continuation_trace,
    initial_guess,
    multistart_scan,
    natural_sweep,
    newton_solve,
)

__version__ = "0.1.0"

__all__ = [
    "AmplitudeVector",
    "Branch",
    "Gauge",
    "ModelParams",
    "Observables",
    "RpaSpectrum",
    "Scheme",
    "SchemeConfig",
    "SolutionPoint",
    "SolverSettings",
    "certify_no_solution",
    "continuation_trace",
    "evaluate",
    "exact_ground_energy",
    "exact_spectrum",
    "initial_guess",
    "interpolated_exact_energy",
    "multistart_scan",
    "natural_sweep",
    "newton_solve",
    "residuals",
    "rpa_at",
]
