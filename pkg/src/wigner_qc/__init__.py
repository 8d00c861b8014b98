"""Wigner-function master-equation solver for the driven Duffing oscillator
and the normalised quantum-classical difference measure G(t)."""
from .grid import (PhaseSpaceField, PhaseSpaceGrid, WignerState, integrate, l2_functional,
                   make_grid, spectral_derivative)
from .operators import (BathParams, DuffingParams, ModelParams, diffusion_term, liouville_term,
                        potential_derivative, quantum_term, rhs)
from .propagator import SolverConfig, evolve, step, suggest_dt
from .diagnostics import DiagnosticRecord, GCurve, g_measure, period_average, purity_entropy, term_magnitudes
from .experiments import (FitResult, InitialSpec, SharedSetup, SweepPlan, collapse_curves, fit_saturation,
                          gaussian_initial, run_point, run_sweep)

__all__ = [
    "PhaseSpaceField", "PhaseSpaceGrid", "WignerState", "integrate", "l2_functional", "make_grid",
    "spectral_derivative", "BathParams", "DuffingParams", "ModelParams", "diffusion_term",
    "liouville_term", "potential_derivative", "quantum_term", "rhs", "SolverConfig", "evolve", "step",
    "suggest_dt", "DiagnosticRecord", "GCurve", "g_measure", "period_average", "purity_entropy",
    "term_magnitudes", "FitResult", "InitialSpec", "SharedSetup", "SweepPlan", "collapse_curves",
    "fit_saturation", "gaussian_initial", "run_point", "run_sweep",
]
__version__ = "0.1.0"
