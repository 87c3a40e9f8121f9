"""Variational Bayes for the logistic observation model.

Each observed sign is modelled as P(y = 1) = sigmoid((L R^T)_ij) with
the same factor prior as the hinge solver.  The likelihood is lower-
bounded by the standard quadratic bound in a variational parameter xi
per observation,

    log sigmoid(x) >= log sigmoid(xi) + (x - xi) / 2 - tau(xi) (x^2 - xi^2),
    tau(xi) = tanh(xi / 2) / (4 xi),

which makes the posterior conditionally Gaussian row by row.  The fit is
plain coordinate ascent on the resulting evidence lower bound (elbo):
left rows, right rows, scale posteriors, then the xi grid, each in
closed form, so the elbo never decreases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .model import Dataset, PriorConfig
from .scales import fit_scale_posterior

_TAU_SMALL = 1e-4


@dataclass(frozen=True)
class RowGaussian:
    """Posterior of one factor row: mean vector and full covariance."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class LogitState:
    """Variational parameters: row Gaussians, scale posteriors, xi grid."""

    mean_left: np.ndarray   # (m1, k)
    cov_left: np.ndarray    # (m1, k, k)
    mean_right: np.ndarray  # (m2, k)
    cov_right: np.ndarray   # (m2, k, k)
    scales: tuple
    xi: np.ndarray          # (n,) nonnegative variational points

    @property
    def k(self) -> int:
        return self.mean_left.shape[1]

    def row_left(self, i: int) -> RowGaussian:
        return RowGaussian(self.mean_left[i], self.cov_left[i])

    def row_right(self, j: int) -> RowGaussian:
        return RowGaussian(self.mean_right[j], self.cov_right[j])


@dataclass(frozen=True)
class LogitFitConfig:
    max_iters: int = 200
    stop_tol: float = 1e-8
    sigma_init: float | None = None
    seed: int = 0
    xi_floor: float = 1e-8
    jitter: float = 1e-10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not (self.stop_tol >= 0.0):
            raise ConfigError("stop_tol must be non-negative")
        if self.sigma_init is not None and not (self.sigma_init > 0.0):
            raise ConfigError("sigma_init must be positive")
        if not (self.xi_floor > 0.0):
            raise ConfigError("xi_floor must be positive")
        if not (self.jitter >= 0.0):
            raise ConfigError("jitter must be non-negative")


@dataclass(frozen=True)
class LogitFitResult:
    state: LogitState
    trace: np.ndarray      # elbo after init and after each sweep
    iterations: int
    converged: bool


def tau(xi):
    """(sigmoid(xi) - 1/2) / (2 xi), evaluated stably as tanh(xi/2)/(4 xi).

    Even in xi, positive, decreasing in |xi|; the removable singularity
    at 0 is handled by its Taylor series 1/8 - xi^2/96 + O(xi^4).
    """
    xi = np.asarray(xi, dtype=np.float64)
    small = np.abs(xi) < _TAU_SMALL
    safe = np.where(small, 1.0, xi)
    out = np.where(small, 0.125 - xi * xi / 96.0, np.tanh(safe / 2.0) / (4.0 * safe))
    return float(out) if out.ndim == 0 else out


def _second_moments(means, covs):
    """E[row row^T] = cov + mean mean^T, flattened to (m, k*k)."""
    m, k = means.shape
    outer = covs + means[:, :, None] * means[:, None, :]
    return outer.reshape(m, k * k)


def _batched_spd_inverse(mats, jitter):
    """Inverses of a stack of SPD matrices via Cholesky, with jitter retries."""
    k = mats.shape[-1]
    eye = np.eye(k)
    attempt = mats
    for round_ in range(4):
        try:
            chol = np.linalg.cholesky(attempt)
        except np.linalg.LinAlgError:
            if round_ == 3:
                break
            bump = jitter * (np.trace(attempt, axis1=1, axis2=2) / k)
            attempt = attempt + bump[:, None, None] * eye
            continue
        inv_chol = np.linalg.solve(chol, np.broadcast_to(eye, attempt.shape).copy())
        inv = np.einsum("mji,mjk->mik", inv_chol, inv_chol)
        return 0.5 * (inv + np.transpose(inv, (0, 2, 1))), chol
    raise NumericalError("row precision matrix is not positive definite")


def update_rows(state: LogitState, data: Dataset, prior: PriorConfig, side: str,
                jitter: float = 1e-10):
    """Closed-form update of all row posteriors on one side.

    Returns (means, covs).  The precision of row i on the left side is
    diag(E[1/gamma]) + 2 sum_{l in row i} tau(xi_l) E[r_j r_j^T], and the
    mean solves it against  (1/2) sum_l y_l E[r_j].
    """
    if side not in ("left", "right"):
        raise ConfigError(f"side must be 'left' or 'right', got {side!r}")
    y = data.signed_labels
    tau_xi = tau(state.xi)
    mean_inv = np.array([s.mean_inv for s in state.scales])
    if side == "left":
        other_sq = _second_moments(state.mean_right, state.cov_right)
        incidence, gather = data.row_incidence, data.cols
        other_mean = state.mean_right
    else:
        other_sq = _second_moments(state.mean_left, state.cov_left)
        incidence, gather = data.col_incidence, data.rows
        other_mean = state.mean_left
    k = other_mean.shape[1]
    acc = incidence @ (tau_xi[:, None] * other_sq[gather])
    precision = 2.0 * acc.reshape(-1, k, k) + np.diag(mean_inv)[None, :, :]
    rhs = 0.5 * (incidence @ (y[:, None] * other_mean[gather]))
    covs, _ = _batched_spd_inverse(precision, jitter)
    means = np.einsum("mij,mj->mi", covs, rhs)
    return means, covs


def update_xi(state: LogitState, data: Dataset, xi_floor: float = 1e-8) -> np.ndarray:
    """Optimal variational points: xi_l^2 = E[(L R^T)_ij^2] per observation.

    The second moment factorises over the independent rows as
    tr(S_L S_R) with S = cov + mean mean^T, computed via flattened
    inner products.  Values are floored away from 0 so tau stays on its
    smooth branch.
    """
    sq_left = _second_moments(state.mean_left, state.cov_left)
    sq_right = _second_moments(state.mean_right, state.cov_right)
    second = np.einsum("nf,nf->n", sq_left[data.rows], sq_right[data.cols])
    return np.maximum(np.sqrt(np.maximum(second, 0.0)), xi_floor)


def _row_block_kl(means, covs, mean_inv, mean_log_sum):
    """KL of independent row Gaussians to N(0, diag(gamma)), scales averaged out."""
    m, k = means.shape
    diag = np.einsum("mkk->mk", covs)
    quad = float(np.sum((diag + means**2) @ mean_inv))
    sign, logdet = np.linalg.slogdet(covs)
    if np.any(sign <= 0):
        raise NumericalError("row covariance lost positive definiteness")
    return 0.5 * (quad + m * mean_log_sum - float(logdet.sum()) - m * k)


def elbo(state: LogitState, data: Dataset, prior: PriorConfig) -> float:
    """Evidence lower bound at the current variational parameters."""
    y = data.signed_labels
    xi = state.xi
    mean_prod = np.einsum(
        "nk,nk->n", state.mean_left[data.rows], state.mean_right[data.cols]
    )
    sq_left = _second_moments(state.mean_left, state.cov_left)
    sq_right = _second_moments(state.mean_right, state.cov_right)
    second = np.einsum("nf,nf->n", sq_left[data.rows], sq_right[data.cols])
    log_sig = -np.logaddexp(0.0, -xi)
    likelihood = float(
        np.sum(log_sig + 0.5 * (y * mean_prod - xi) - tau(xi) * (second - xi * xi))
    )
    mean_inv = np.array([s.mean_inv for s in state.scales])
    mean_log_sum = float(sum(s.mean_log for s in state.scales))
    kl = _row_block_kl(state.mean_left, state.cov_left, mean_inv, mean_log_sum)
    kl += _row_block_kl(state.mean_right, state.cov_right, mean_inv, mean_log_sum)
    kl += float(sum(s.kl_to_prior for s in state.scales))
    value = likelihood - kl
    if not math.isfinite(value):
        raise NumericalError("elbo evaluated to a non-finite value")
    return value


def _scale_stats(state: LogitState) -> np.ndarray:
    diag_l = np.einsum("mkk->mk", state.cov_left)
    diag_r = np.einsum("mkk->mk", state.cov_right)
    return 0.5 * (
        (diag_l + state.mean_left**2).sum(axis=0)
        + (diag_r + state.mean_right**2).sum(axis=0)
    )


def update_scales(state: LogitState, data: Dataset, prior: PriorConfig) -> tuple:
    """Exact scale-posterior update (conjugate, shared with the hinge solver)."""
    return tuple(
        fit_scale_posterior(float(s), prior, data.m1, data.m2)
        for s in _scale_stats(state)
    )


def fit_logit(data: Dataset, prior: PriorConfig, cfg: LogitFitConfig) -> LogitFitResult:
    """Coordinate-ascent fit of the logistic variational posterior."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    k = prior.k
    # Unit-scale init, as in the hinge solver: the zero-mean state is a
    # fixed point of the coordinate updates (strong ridge from the scale
    # posteriors at tiny statistics), so small inits stall there.
    sigma = cfg.sigma_init if cfg.sigma_init is not None else 1.0
    mean_left = rng.normal(0.0, sigma, size=(data.m1, k))
    mean_right = rng.normal(0.0, sigma, size=(data.m2, k))
    cov_left = np.broadcast_to(np.eye(k) / data.n, (data.m1, k, k)).copy()
    cov_right = np.broadcast_to(np.eye(k) / data.n, (data.m2, k, k)).copy()
    state = LogitState(
        mean_left, cov_left, mean_right, cov_right,
        scales=(), xi=np.ones(data.n),
    )
    state = replace(state, scales=tuple(
        fit_scale_posterior(float(s), prior, data.m1, data.m2)
        for s in _scale_stats(state)
    ))
    state = replace(state, xi=update_xi(state, data, cfg.xi_floor))

    current = elbo(state, data, prior)
    trace = [current]
    iterations = 0
    converged = False
    for t in range(1, cfg.max_iters + 1):
        iterations = t
        means, covs = update_rows(state, data, prior, "left", cfg.jitter)
        state = replace(state, mean_left=means, cov_left=covs)
        means, covs = update_rows(state, data, prior, "right", cfg.jitter)
        state = replace(state, mean_right=means, cov_right=covs)
        state = replace(state, scales=update_scales(state, data, prior))
        state = replace(state, xi=update_xi(state, data, cfg.xi_floor))
        value = elbo(state, data, prior)
        trace.append(value)
        if abs(value - current) <= cfg.stop_tol:
            current = value
            converged = True
            break
        current = value
    return LogitFitResult(
        state=state, trace=np.array(trace), iterations=iterations, converged=converged
    )
