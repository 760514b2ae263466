"""Calibrated nearest-neighbour classification scores.

NED scores are a temperature-scaled softmax of negative neighbour distances.
The temperature is tuned by leave-one-out likelihood on the support set.
"""

from ._nedcal import (
    EmbeddingSet,
    Error,
    IoError,
    LabelSpaceMismatch,
    MixtureSpec,
    TuningPreconditionError,
    ValidationError,
    ece,
    evaluate,
    kde_posterior,
    load,
    loo_nll,
    perturb,
    predict,
    reliability_bins,
    sample_benchmark,
    sweep_k,
    sweep_severity,
    true_posterior,
    tune,
)

__all__ = [
    "EmbeddingSet",
    "Error",
    "IoError",
    "LabelSpaceMismatch",
    "MixtureSpec",
    "TuningPreconditionError",
    "ValidationError",
    "ece",
    "evaluate",
    "kde_posterior",
    "load",
    "loo_nll",
    "perturb",
    "predict",
    "reliability_bins",
    "sample_benchmark",
    "sweep_k",
    "sweep_severity",
    "true_posterior",
    "tune",
]
__version__ = "0.1.0"
