"""Recoverability: robustness margin, relaxed partial-recovery condition, l1 fitting, tomography."""

from .eta import (
    METHOD_EXACT,
    METHOD_MULTISTART,
    RecoverabilityReport,
    Witness,
    compute_eta,
    cross_ratio_violations,
    margin_objective,
    robustness_K,
    worst_case_margin,
)
from .partial import L1Fit, PartialStructure, PartialVerdict, check_A2_prime, l1_fit
from .simplex import LPResult, solve_lp
from .tomography import compose_tomography, shared_mean_structure

__all__ = [
    "L1Fit",
    "LPResult",
    "METHOD_EXACT",
    "METHOD_MULTISTART",
    "PartialStructure",
    "PartialVerdict",
    "RecoverabilityReport",
    "Witness",
    "check_A2_prime",
    "compose_tomography",
    "compute_eta",
    "cross_ratio_violations",
    "l1_fit",
    "margin_objective",
    "robustness_K",
    "shared_mean_structure",
    "solve_lp",
    "worst_case_margin",
]
