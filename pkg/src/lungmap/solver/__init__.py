"""Full-wave acoustic solver."""
from .fdtd import STAGGERED_COEFFS, Solver, SolverConfig, WaveState, step
from .relaxation import (
    RelaxParams,
    fit_attenuation,
    make_absorbing_boundary,
    memory_coefficients,
    model_attenuation,
    phase_velocity,
    pml_profile,
    power_law,
    update_memory,
)

__all__ = [
    "STAGGERED_COEFFS", "Solver", "SolverConfig", "WaveState", "step",
    "RelaxParams", "fit_attenuation", "make_absorbing_boundary", "memory_coefficients",
    "model_attenuation", "phase_velocity", "pml_profile", "power_law", "update_memory",
]
