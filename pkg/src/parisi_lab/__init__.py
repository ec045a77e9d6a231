"""Numerical tools for Parisi variational problems of mixed p-spin models:
the one-replica Parisi PDE and functional, first-order optimality checks,
the two-system bound with a constrained overlap, and an exact small-N oracle."""
from .errors import (ConfigurationError, DomainError, GridOverflowError, HypothesisRefusal,
                     InvalidCDFError, InvalidMeasureError, InvalidModifiedMeasureError,
                     NotPSDError, ParisiLabError, ZeroMixtureError)
from .measures import AtomicMeasure, discretize, distance
from .mixtures import CouplingSpec, MixtureSpec, sk
from .parisi1d import GridParams, parisi_functional, solve_phi, solve_phi_fd
from .flows import at_line_check, check_parisi_criterion, second_moment_curve
from .optimizer import find_parisi_measure, minimize_krsb
from .gt2d import (Grid2DParams, build_T, coupled_fixed_point, gt_bound, modified_measure,
                   optimize_lambda, scan_bound, solve_psi)

__version__ = "0.1.0"
__all__ = [
    "AtomicMeasure", "ConfigurationError", "CouplingSpec", "DomainError", "Grid2DParams",
    "GridOverflowError", "GridParams", "HypothesisRefusal", "InvalidCDFError",
    "InvalidMeasureError", "InvalidModifiedMeasureError", "MixtureSpec", "NotPSDError",
    "ParisiLabError", "ZeroMixtureError", "at_line_check", "build_T",
    "check_parisi_criterion", "coupled_fixed_point", "discretize", "distance",
    "find_parisi_measure", "gt_bound", "minimize_krsb", "modified_measure",
    "optimize_lambda", "parisi_functional", "scan_bound", "second_moment_curve", "sk",
    "solve_phi", "solve_phi_fd", "solve_psi",
]
