"""Variational 1-bit matrix completion.

Low-rank binary matrix recovery from noisy sign observations, with two
mean-field solvers (a hinge-loss pseudo-posterior and a logistic
posterior), scale-mixture priors over factor columns, and a computable
empirical risk certificate for the hinge solver.
"""

from .errors import ConfigError, DataError, NumericalError
from .model import (
    Dataset,
    ObservedEntry,
    PredictorMatrix,
    PriorConfig,
    hinge_risk,
    logistic_risk,
    predict_labels,
    zero_one_risk,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "Dataset",
    "ObservedEntry",
    "PredictorMatrix",
    "PriorConfig",
    "hinge_risk",
    "logistic_risk",
    "predict_labels",
    "zero_one_risk",
    "__version__",
]
