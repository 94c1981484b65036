"""Impulse control, observation at one time, and output-feedback stabilization
for 1D Schrödinger-type heat equations y' = Ay, A = Δ - V, on (0, ℓ) with
Dirichlet conditions, discretized by finite differences."""
from .errors import ConfigurationError, DomainError, LabError, NumericalError
from .spectral_core import Grid1D, SpectralDecomposition, SubdomainMask, propagate, spectral_problem

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "LabError",
    "NumericalError",
    "Grid1D",
    "SpectralDecomposition",
    "SubdomainMask",
    "propagate",
    "spectral_problem",
]
