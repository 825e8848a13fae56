"""Degenerate saddle points: leading-term classification, blown-up gradient
flows, deep linear network certification and center-stable graphs."""

from .blowup import (
    BlowupField,
    CylinderPoint,
    EuclideanMetric,
    PerturbedMetric,
    linearization_spectrum,
    predicted_spectrum,
    pullback_metric_blocks,
    vector_field,
)
from .errors import DomainError, NumericalFailure, SaddleError
from .flow import (
    FlowConfig,
    Termination,
    integrate_blowup_flow,
    integrate_gradient_flow,
    monte_carlo_avoidance,
)
from .objective import (
    BlackBoxObjective,
    HomogeneousPoly,
    PolynomialObjective,
    leading_term,
    vanishing_order,
)
from .sphere import SaddleReport, SearchOptions, classify_leading, classify_saddle, find_crit_points

__all__ = [
    "BlackBoxObjective",
    "BlowupField",
    "CylinderPoint",
    "DomainError",
    "EuclideanMetric",
    "FlowConfig",
    "HomogeneousPoly",
    "NumericalFailure",
    "PerturbedMetric",
    "PolynomialObjective",
    "SaddleError",
    "SaddleReport",
    "SearchOptions",
    "Termination",
    "classify_leading",
    "classify_saddle",
    "find_crit_points",
    "integrate_blowup_flow",
    "integrate_gradient_flow",
    "leading_term",
    "linearization_spectrum",
    "monte_carlo_avoidance",
    "predicted_spectrum",
    "pullback_metric_blocks",
    "vanishing_order",
    "vector_field",
]
