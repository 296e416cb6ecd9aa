"""Numerics for self-similar blow-up of u_tt = u_xx + |u|^{p-1}u + f(u) with a
log-damped perturbation f: the implicit profile, the linearized operator in
similarity variables, time evolution, energies and modulation audits."""
from .errors import (CoercivityViolation, Divergence, DomainError, FitRejected, InvalidArgument,
                     LabError, ModulationFailure, NoBlowupDetected, NoLimit, NotApplicable,
                     NumericError, ParameterSaturation, UndefinedRatio)
from .grid import Params, StateField, WeightedGrid, make_grid, norm_H

__version__ = "0.1.0"

__all__ = [
    "Params", "StateField", "WeightedGrid", "make_grid", "norm_H",
    "LabError", "InvalidArgument", "NumericError", "DomainError", "NoBlowupDetected",
    "NotApplicable", "FitRejected", "CoercivityViolation", "ModulationFailure",
    "ParameterSaturation", "Divergence", "UndefinedRatio", "NoLimit",
]
