"""Constant-step SGD against its second-order modified diffusion.

Simulators for the chain and the SDE, a deterministic transfer-operator
solver, a backward Kolmogorov PDE solver and the weak-error harness.
"""
from ._accel import USE_NUMBA, backend_name
from .cutoff import CutoffSpec
from .errors import ConfigurationError, DomainError, NumericalPSDError
from .observables import ObservableSpec
from .problems import ProblemConstants, ProblemSpec, constants

__all__ = [
    "USE_NUMBA", "backend_name", "CutoffSpec", "ConfigurationError", "DomainError", "NumericalPSDError",
    "ObservableSpec", "ProblemConstants", "ProblemSpec", "constants",
]
__version__ = "0.1.0"
