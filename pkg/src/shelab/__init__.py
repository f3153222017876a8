"""Monte Carlo lab for the stochastic heat equation on a periodic lattice."""

from .errors import BlowUpError, ConfigError, DomainViolation, Undetermined
from .grid import LatticeGrid, grid_for
from .kernel import heat_kernel, semigroup_convolve
from .malliavin import clark_ocone_check, constants_report, simulate_derivative
from .noise import NoiseModel, dalang_integral, lambda_inverse, lattice_covariance, upsilon
from .observables import ObservableSpec, estimate_b, spatial_average, variance_lower_bound
from .rng import seed_stream
from .solver import (DiffusionSpec, Ensemble, Trajectory, gaussian_oracle_covariance, pam_second_moment_oracle,
                     simulate)
from .stats import TestVerdict, distance_to_gaussian, normality_test, rate_fit, tv_normals_bound

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "ConfigError", "DiffusionSpec", "DomainViolation", "Ensemble", "LatticeGrid", "NoiseModel",
    "ObservableSpec", "TestVerdict", "Trajectory", "Undetermined", "clark_ocone_check", "constants_report",
    "dalang_integral", "distance_to_gaussian", "estimate_b", "gaussian_oracle_covariance", "grid_for",
    "heat_kernel", "lambda_inverse", "lattice_covariance", "normality_test", "pam_second_moment_oracle",
    "rate_fit", "seed_stream", "semigroup_convolve", "simulate", "simulate_derivative", "spatial_average",
    "tv_normals_bound", "upsilon", "variance_lower_bound",
]
