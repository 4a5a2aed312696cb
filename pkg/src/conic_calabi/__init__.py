"""Radial reduction of conic Kähler-Einstein metrics near a Fano divisor.

Modules: :mod:`params` (constant table), :mod:`profile` (solver),
:mod:`asymptotics` (apex expansion), :mod:`metric` (geometry),
:mod:`gluing` (scale planning), :mod:`obstruction` (balancing model),
:mod:`cli` (command line).
"""

__version__ = "0.1.0"

from .errors import (BarrierError, CalabiError, ConvergenceError, DomainError, FitError,
                     NoRootError, NoSignChangeError, RangeError, RegimeError, ThetaError,
                     WindowError)
from .params import DerivedConstants, GeometryParams, Regime, derive, regime
from .profile import GridSpec, Normalization, ProfileSolution, solve_profile

__all__ = [
    "__version__",
    "BarrierError", "CalabiError", "ConvergenceError", "DomainError", "FitError",
    "NoRootError", "NoSignChangeError", "RangeError", "RegimeError", "ThetaError",
    "WindowError",
    "DerivedConstants", "GeometryParams", "Regime", "derive", "regime",
    "GridSpec", "Normalization", "ProfileSolution", "solve_profile",
]
