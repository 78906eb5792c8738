"""Mechanical cooling driven by thermal light: mean-field, stochastic and exact solvers."""
from .params import SystemParams, ValidationReport, validate, thermal_occupation, effective_temperature
from . import fock, meanfield, params, stochastic

__all__ = [
    "SystemParams",
    "ValidationReport",
    "validate",
    "thermal_occupation",
    "effective_temperature",
    "fock",
    "meanfield",
    "params",
    "stochastic",
]
__version__ = "0.1.0"
