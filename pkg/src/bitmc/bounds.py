"""Empirical risk certificate for the hinge-loss solver.

The fitted variational objective, plus two explicit penalty terms,
upper-bounds the expected hinge risk of a draw from the pseudo-posterior
with probability at least 1 - epsilon:

    bound = avb + lambda / (2 n) + log(1 / epsilon) / lambda.

Everything on the right is computable from the fitted state, so the
certificate can be reported next to test-set metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError
from .model import Dataset, PriorConfig
from .scales import kl_scale  # re-export: the scale KL is part of the bound API

__all__ = ["BoundConfig", "BoundReport", "kl_scale", "empirical_bound"]


@dataclass(frozen=True)
class BoundConfig:
    """Confidence level and temperature used by the certificate."""

    epsilon: float = 0.05
    lam: float | None = None

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.lam is not None and not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise ConfigError(f"lambda must be positive and finite, got {self.lam}")


@dataclass(frozen=True)
class BoundReport:
    """The certificate and its three additive components."""

    avb: float
    lambda_over_2n: float
    confidence_term: float
    total: float

    def as_dict(self) -> dict:
        return {
            "avb": self.avb,
            "lambda_over_2n": self.lambda_over_2n,
            "confidence_term": self.confidence_term,
            "total": self.total,
        }


def empirical_bound(state, data: Dataset, prior: PriorConfig, config: BoundConfig) -> BoundReport:
    """Evaluate the hinge-risk certificate at a fitted state.

    ``config.lam`` must match the temperature the state was fitted with;
    if left as None the state's own lambda is used.
    """
    from . import hinge_vb  # deferred: hinge_vb imports this module for BoundConfig

    lam = config.lam if config.lam is not None else getattr(state, "lam", None)
    if lam is None:
        raise ConfigError("a lambda value is required to evaluate the bound")
    value = hinge_vb.avb(state, data, prior, lam)
    slack = lam / (2.0 * data.n)
    confidence = math.log(1.0 / config.epsilon) / lam
    return BoundReport(
        avb=value,
        lambda_over_2n=slack,
        confidence_term=confidence,
        total=value + slack + confidence,
    )
