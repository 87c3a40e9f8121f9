"""Variational posteriors over the per-column scale variables.

Each factor column k has a scale gamma_k with a hyperprior (inverse
gamma or gamma).  Given the Gaussian blocks of the variational family,
the optimal scale posterior depends on the data only through

    s_k = ( sum_i (vL_ik + L_ik^2) + sum_j (vR_jk + R_jk^2) ) / 2,

and is conjugate: inverse gamma under the inverse-gamma prior, and
generalised inverse Gaussian (GIG) under the gamma prior.  The moments
E[1/gamma], E[log gamma] and the KL to the prior appear in every
objective evaluation, so they are computed once here and cached on the
posterior object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import gammaln

from .errors import ConfigError, NumericalError
from .model import PriorConfig
from .special import GigParams, digamma, gig_moments

_KL_CLIP = 1.0e-12


@dataclass(frozen=True)
class ScalePosterior:
    """One column-scale posterior with cached moments.

    ``family`` names the conjugate form ("inv-gamma" or "gig");
    ``params`` holds (shape, scale) for the inverse gamma and the
    :class:`GigParams` for the GIG.
    """

    family: str
    params: tuple
    mean_inv: float
    mean_log: float
    kl_to_prior: float


def _kl_inv_gamma(shape1, scale1, shape2, scale2) -> float:
    """KL( InvGamma(shape1, scale1) || InvGamma(shape2, scale2) )."""
    return (
        (shape1 - shape2) * digamma(shape1)
        - gammaln(shape1)
        + gammaln(shape2)
        + shape2 * (math.log(scale1) - math.log(scale2))
        + shape1 * (scale2 - scale1) / scale1
    )


def _kl_gig_gamma(gig: GigParams, alpha, beta) -> float:
    """KL( GIG(a, b, eta) || Gamma(alpha, rate beta) ), from GIG moments."""
    mom = gig_moments(gig)
    return (
        mom.log_norm
        - alpha * math.log(beta)
        + gammaln(alpha)
        + (gig.eta - alpha) * mom.mean_log
        + (beta - 0.5 * gig.a) * mom.mean
        - 0.5 * gig.b * mom.mean_inv
    )


def _checked_kl(value: float) -> float:
    if value < 0.0:
        if value < -_KL_CLIP:
            raise NumericalError(f"KL came out negative beyond tolerance: {value}")
        return 0.0
    return float(value)


def kl_scale(posterior: ScalePosterior, prior: PriorConfig) -> float:
    """KL divergence from a scale posterior to the matching scale prior.

    The pairing is fixed by conjugacy: an inverse-gamma posterior goes
    with the inverse-gamma prior and a GIG posterior with the gamma
    prior; anything else is a configuration error.
    """
    if posterior.family == "inv-gamma":
        if prior.family != "inv-gamma":
            raise ConfigError("inverse-gamma posterior requires an inverse-gamma prior")
        shape, scale = posterior.params
        return _checked_kl(_kl_inv_gamma(shape, scale, prior.alpha, prior.beta))
    if posterior.family == "gig":
        if prior.family != "gamma":
            raise ConfigError("GIG posterior requires a gamma prior")
        (gig,) = posterior.params
        return _checked_kl(_kl_gig_gamma(gig, prior.alpha, prior.beta))
    raise ConfigError(f"unknown scale posterior family {posterior.family!r}")


def fit_scale_posterior(s_stat: float, prior: PriorConfig, m1: int, m2: int) -> ScalePosterior:
    """Optimal scale posterior for one column given its statistic s_k.

    Under the inverse-gamma prior the posterior is
    InvGamma((m1+m2)/2 + alpha, s_k + beta).  Under the gamma prior it
    is GIG(a = 2 beta, b = 2 s_k, eta = alpha - (m1+m2)/2): matching
    exponents of gamma^(eta-1) exp(-(a gamma + b/gamma)/2) against the
    joint density contributes -beta gamma from the prior (so a = 2 beta)
    and -s_k / gamma from the Gaussian block (so b = 2 s_k).
    """
    if not (s_stat > 0.0 and math.isfinite(s_stat)):
        raise NumericalError(f"scale statistic must be positive and finite, got {s_stat}")
    half = 0.5 * (m1 + m2)
    if prior.family == "inv-gamma":
        shape = half + prior.alpha
        scale = s_stat + prior.beta
        mean_inv = shape / scale
        mean_log = math.log(scale) - digamma(shape)
        kl = _checked_kl(_kl_inv_gamma(shape, scale, prior.alpha, prior.beta))
        return ScalePosterior(
            family="inv-gamma",
            params=(shape, scale),
            mean_inv=mean_inv,
            mean_log=mean_log,
            kl_to_prior=kl,
        )
    gig = GigParams(a=2.0 * prior.beta, b=2.0 * s_stat, eta=prior.alpha - half)
    mom = gig_moments(gig)
    kl = _checked_kl(_kl_gig_gamma(gig, prior.alpha, prior.beta))
    return ScalePosterior(
        family="gig",
        params=(gig,),
        mean_inv=mom.mean_inv,
        mean_log=mom.mean_log,
        kl_to_prior=kl,
    )
