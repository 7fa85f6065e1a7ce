"""Cucker-Smale flocking particles, reduced inertial PDE models and diagnostics."""
from .core import (CFLError, ConfigError, FieldPair, GridSpec, NumericalError, ParticleEnsemble,
                   ScenarioConfig, Torus, VacuumError, derive_rng, geodesic_displacement,
                   mean_velocity, wrap)
from .kernels import (InteractionKernel, KernelSplit, WeightField, check_flocking_condition,
                      empirical_density, eval_kernel, exact_weight, split_kernel, von_mises_delta,
                      weight_at)
from .spectral import (SpectralPlan, convolve, kernel_fourier_check, norm_Hm2, norm_L2,
                       norm_pair_Hm2, spectral_gradient)

__version__ = "0.1.0"

__all__ = [
    "CFLError", "ConfigError", "FieldPair", "GridSpec", "NumericalError", "ParticleEnsemble",
    "ScenarioConfig", "Torus", "VacuumError", "derive_rng", "geodesic_displacement",
    "mean_velocity", "wrap", "InteractionKernel", "KernelSplit", "WeightField",
    "check_flocking_condition", "empirical_density", "eval_kernel", "exact_weight",
    "split_kernel", "von_mises_delta", "weight_at", "SpectralPlan", "convolve",
    "kernel_fourier_check", "norm_Hm2", "norm_L2", "norm_pair_Hm2", "spectral_gradient",
]
