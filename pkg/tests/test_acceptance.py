"""Acceptance gate: product-level checks, one summary line per criterion.

The heavy experiment runs live in module-scoped fixtures so several
criteria can share them; every fitted run registers its objective trace,
and the descent/ascent criterion re-checks all of them.  Criteria that
need resources this environment cannot provide (the MovieLens ratings
file) skip with instructions rather than silently passing.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from util import random_dataset, random_hinge_state

from bitmc.bounds import BoundConfig, empirical_bound
from bitmc.data import (NoiseSpec, gen_type_a, gen_type_b, parse_movielens,
                        sample_observations, split)
from bitmc.hinge_vb import (FactorizationState, HingeFitConfig, _solve_variance,
                            avb, state_kl, subgradient_means)
from bitmc.hinge_vb import fit as fit_hinge
from bitmc.logit_vb import LogitFitConfig, LogitState, fit_logit, tau, update_xi
from bitmc.model import PredictorMatrix, PriorConfig, zero_one_risk
from bitmc.scales import fit_scale_posterior, kl_scale
from bitmc.special import GigParams, digamma, gig_moments, log_bessel_k

SEEDS = range(5)
K = 10
SIZE = 200
RANK = 3
N_OBS = 8000  # 20% of the 200 x 200 grid

# every fitted run in this module appends (name, objective, trace) here;
# the descent/ascent criterion walks the registry
TRACE_REGISTRY = []


def _register(name: str, objective: str, trace) -> None:
    TRACE_REGISTRY.append((name, objective, np.asarray(trace, dtype=float)))


def _full_sign_error(left, right, truth_matrix) -> float:
    predicted = np.where(left @ right.T >= 0.0, 1.0, -1.0)
    target = np.where(truth_matrix >= 0.0, 1.0, -1.0)
    return float(np.mean(predicted != target))


def _run_hinge(data, prior, name, **overrides):
    cfg = HingeFitConfig(lam=float(data.n), **overrides)
    result = fit_hinge(data, prior, cfg)
    _register(name, "avb", result.trace)
    return result


def _run_logit(data, prior, name, seed):
    result = fit_logit(data, prior, LogitFitConfig(seed=seed))
    _register(name, "elbo", result.trace)
    return result


# ------------------------------------------------------------ fixtures


@pytest.fixture(scope="module")
def noiseless_runs():
    """Hinge fits on clean rank-3 sign matrices, both priors, 5 seeds."""
    runs = []
    for family in ("inv-gamma", "gamma"):
        prior = PriorConfig(family, 1.0, 1.0, K)
        for seed in SEEDS:
            truth = gen_type_a(SIZE, SIZE, RANK, seed=1000 + seed)
            data, _ = sample_observations(truth, NoiseSpec(), n=N_OBS,
                                          seed=2000 + seed)
            start = time.monotonic()
            result = _run_hinge(data, prior, f"noiseless/{family}/{seed}",
                                seed=seed)
            runs.append({
                "family": family,
                "seed": seed,
                "seconds": time.monotonic() - start,
                "error": _full_sign_error(result.state.left,
                                          result.state.right, truth.matrix),
            })
    return runs


@pytest.fixture(scope="module")
def switch_noise_runs():
    """Hinge vs logistic posterior on 10%-flipped observations."""
    prior = PriorConfig("inv-gamma", 1.0, 1.0, K)
    runs = []
    for seed in SEEDS:
        truth = gen_type_a(SIZE, SIZE, RANK, seed=1000 + seed)
        data, _ = sample_observations(truth, NoiseSpec("switch", 0.1),
                                      n=N_OBS, seed=2000 + seed)
        hinge = _run_hinge(data, prior, f"switch/hinge/{seed}", seed=seed)
        logit = _run_logit(data, prior, f"switch/logit/{seed}", seed=seed)
        runs.append({
            "seed": seed,
            "hinge": _full_sign_error(hinge.state.left, hinge.state.right,
                                      truth.matrix),
            "logit": _full_sign_error(logit.state.mean_left,
                                      logit.state.mean_right, truth.matrix),
        })
    return runs


@pytest.fixture(scope="module")
def logistic_noise_runs():
    """Both solvers on logistically flipped labels, sign and Gaussian truths."""
    prior = PriorConfig("inv-gamma", 1.0, 1.0, K)
    runs = {"sign-truth": [], "gaussian-truth": []}
    for kind, generator in (("sign-truth", gen_type_a),
                            ("gaussian-truth", gen_type_b)):
        for seed in SEEDS:
            truth = generator(SIZE, SIZE, RANK, seed=1000 + seed)
            data, _ = sample_observations(truth, NoiseSpec("logistic"),
                                          n=N_OBS, seed=2000 + seed)
            hinge = _run_hinge(data, prior, f"logistic/{kind}/hinge/{seed}",
                               init="spectral", seed=seed)
            logit = _run_logit(data, prior, f"logistic/{kind}/logit/{seed}",
                               seed=seed)
            runs[kind].append({
                "seed": seed,
                "hinge": _full_sign_error(hinge.state.left, hinge.state.right,
                                          truth.matrix),
                "logit": _full_sign_error(logit.state.mean_left,
                                          logit.state.mean_right,
                                          truth.matrix),
            })
    return runs


@pytest.fixture(scope="module")
def bound_replications():
    """100 small noiseless replications: certificate vs held-out risk."""
    prior = PriorConfig("inv-gamma", 1.0, 1.0, 4)
    covered = 0
    details = []
    for rep in range(100):
        truth = gen_type_a(30, 30, 2, seed=5000 + rep)
        data, _ = sample_observations(truth, NoiseSpec(), n=480,
                                      seed=6000 + rep)
        train, test = split(data, 360, seed=rep)
        result = fit_hinge(train, prior,
                           HingeFitConfig(lam=float(train.n), seed=rep))
        _register(f"bound-rep/{rep}", "avb", result.trace)
        report = empirical_bound(result.state, train, prior,
                                 BoundConfig(epsilon=0.05, lam=float(train.n)))
        held_out = zero_one_risk(
            PredictorMatrix.from_factors(result.state.left, result.state.right),
            test,
        )
        covered += report.total >= held_out
        details.append((report.total, held_out))
    return {"covered": covered, "details": details}


# ------------------------------------------------------------ criteria


@pytest.mark.criterion(1, "noiseless recovery <= 0.5% (5 seeds, both priors)")
def test_noiseless_recovery(noiseless_runs):
    for run in noiseless_runs:
        assert run["error"] <= 0.005, run
        assert run["seconds"] <= 120.0, run


@pytest.mark.criterion(2, "10% switch noise: hinge <= 1.5% and beats logit in >= 4/5")
def test_switch_noise(switch_noise_runs):
    for run in switch_noise_runs:
        assert run["hinge"] <= 0.015, run
    wins = sum(run["hinge"] < run["logit"] for run in switch_noise_runs)
    assert wins >= 4, switch_noise_runs


@pytest.mark.criterion(3, "logistic noise orderings: hinge wins on sign truth, logit on Gaussian truth")
def test_logistic_noise_orderings(logistic_noise_runs):
    sign_wins = sum(r["hinge"] < r["logit"]
                    for r in logistic_noise_runs["sign-truth"])
    gaussian_wins = sum(r["logit"] < r["hinge"]
                        for r in logistic_noise_runs["gaussian-truth"])
    assert sign_wins >= 3, logistic_noise_runs["sign-truth"]
    assert gaussian_wins >= 3, logistic_noise_runs["gaussian-truth"]


def _movielens_path():
    env = os.environ.get("BITMC_MOVIELENS")
    if env:
        return Path(env)
    return Path(__file__).resolve().parent.parent / "data" / "ml-100k" / "u.data"


@pytest.mark.criterion(4, "MovieLens 100k accuracies (hinge .69-.75, logit .65-.71)")
def test_movielens_accuracies():
    path = _movielens_path()
    if not path.exists():
        pytest.skip(
            f"MovieLens ratings not found at {path}; "
            "run scripts/fetch_movielens.py on a machine with network access "
            "or point BITMC_MOVIELENS at u.data"
        )
    start = time.monotonic()
    full = parse_movielens(path)
    train, test = split(full, 95000, seed=0)
    prior = PriorConfig("inv-gamma", 1.0, 1.0, K)
    hinge = _run_hinge(train, prior, "movielens/hinge", seed=0)
    hinge_acc = 1.0 - zero_one_risk(
        PredictorMatrix.from_factors(hinge.state.left, hinge.state.right), test
    )
    logit = _run_logit(train, prior, "movielens/logit", seed=0)
    logit_acc = 1.0 - zero_one_risk(
        PredictorMatrix.from_factors(logit.state.mean_left,
                                     logit.state.mean_right), test
    )
    elapsed = time.monotonic() - start
    assert 0.69 <= hinge_acc <= 0.75, hinge_acc
    assert 0.65 <= logit_acc <= 0.71, logit_acc
    assert elapsed <= 900.0, elapsed


@pytest.mark.criterion(5, "objective traces monotone on every fitted run")
def test_objective_traces_monotone(noiseless_runs, switch_noise_runs,
                                   logistic_noise_runs, bound_replications):
    assert TRACE_REGISTRY
    for name, objective, trace in TRACE_REGISTRY:
        diffs = np.diff(trace)
        if objective == "avb":
            assert diffs.max(initial=-np.inf) <= 1e-10, (name, diffs.max())
        else:
            assert diffs.min(initial=np.inf) >= -1e-8, (name, diffs.min())


@pytest.mark.criterion(6, "oracle equivalences: variance, gig moments, subgradients, xi, scale KL")
def test_variance_update_oracle():
    rng = np.random.default_rng(61)
    for _ in range(1000):
        a = 10.0 ** rng.uniform(-3, 1.6)
        b = 10.0 ** rng.uniform(-3, 1.6)
        c = 10.0 ** rng.uniform(-3, 1.3)
        assert _solve_variance(a, b, c) == pytest.approx(
            oracles.variance_update_oracle(a, b, c), rel=1e-9, abs=1e-9
        )


@pytest.mark.criterion(6, "oracle equivalences: variance, gig moments, subgradients, xi, scale KL")
def test_gig_moments_oracle():
    rng = np.random.default_rng(62)
    for _ in range(200):
        a = 10.0 ** rng.uniform(-2, 2)
        b = 10.0 ** rng.uniform(-2, 2)
        eta = rng.uniform(-50.0, 20.0)
        mom = gig_moments(GigParams(a=a, b=b, eta=eta))
        ref = oracles.gig_moments_quad(a, b, eta)
        assert mom.mean_inv == pytest.approx(ref["mean_inv"], rel=1e-7)
        assert mom.mean_log == pytest.approx(ref["mean_log"], rel=1e-7, abs=1e-7)


@pytest.mark.criterion(6, "oracle equivalences: variance, gig moments, subgradients, xi, scale KL")
def test_subgradient_oracle():
    rng = np.random.default_rng(63)
    priors = [PriorConfig("inv-gamma", 1.2, 0.8, 2),
              PriorConfig("gamma", 1.5, 1.1, 2)]
    checked = 0
    while checked < 100:
        data = random_dataset(rng, m1=4, m2=4, n=12)
        state = random_hinge_state(rng, data, priors[checked % 2], spread=0.8)
        margins = data.signed_labels * np.einsum(
            "nk,nk->n", state.left[data.rows], state.right[data.cols]
        )
        if np.min(np.abs(1.0 - margins)) < 1e-3:
            continue
        if min(np.abs(state.left).min(), np.abs(state.right).min()) < 1e-3:
            continue
        prior = priors[checked % 2]
        checked += 1
        lam = float(data.n)
        grad_l, grad_r = subgradient_means(state, data, prior, lam)
        fd_l = oracles.finite_diff_grad(
            lambda arr: avb(
                FactorizationState(arr, state.right, state.var_left,
                                   state.var_right, state.scales),
                data, prior, lam),
            state.left.copy(),
        )
        fd_r = oracles.finite_diff_grad(
            lambda arr: avb(
                FactorizationState(state.left, arr, state.var_left,
                                   state.var_right, state.scales),
                data, prior, lam),
            state.right.copy(),
        )
        assert np.abs(grad_l - fd_l).max() < 1e-4
        assert np.abs(grad_r - fd_r).max() < 1e-4


def _random_logit_state(rng, m1, m2, k, n):
    def block(m):
        means = rng.normal(0.0, 0.8, (m, k))
        factors = rng.normal(0.0, 0.4, (m, k, k))
        covs = np.einsum("mij,mkj->mik", factors, factors)
        covs += 0.05 * np.eye(k)
        return means, covs
    mean_l, cov_l = block(m1)
    mean_r, cov_r = block(m2)
    return LogitState(mean_left=mean_l, cov_left=cov_l, mean_right=mean_r,
                      cov_right=cov_r, scales=(), xi=np.ones(n))


@pytest.mark.criterion(6, "oracle equivalences: variance, gig moments, subgradients, xi, scale KL")
def test_update_xi_oracle():
    rng = np.random.default_rng(64)
    for case in range(50):
        data = random_dataset(rng, m1=4, m2=4, n=6)
        state = _random_logit_state(rng, data.m1, data.m2, 2, data.n)
        xi = update_xi(state, data)
        t = int(rng.integers(0, data.n))
        i, j = int(data.rows[t]), int(data.cols[t])
        mc, se = oracles.mc_product_second_moment(
            state.mean_left[i], state.cov_left[i],
            state.mean_right[j], state.cov_right[j],
            samples=200000, seed=9000 + case,
        )
        assert abs(xi[t] ** 2 - mc) < 3.0 * se, case


@pytest.mark.criterion(6, "oracle equivalences: variance, gig moments, subgradients, xi, scale KL")
def test_kl_scale_oracle():
    rng = np.random.default_rng(65)
    for _ in range(40):
        prior = PriorConfig("inv-gamma", 10.0 ** rng.uniform(-0.5, 1.0),
                            10.0 ** rng.uniform(-0.5, 1.0), 3)
        posterior = fit_scale_posterior(10.0 ** rng.uniform(-1, 2), prior, 7, 6)
        shape, scale = posterior.params
        ref = oracles.kl_inv_gamma_quad(shape, scale, prior.alpha, prior.beta)
        assert kl_scale(posterior, prior) == pytest.approx(ref, rel=1e-7, abs=1e-7)


@pytest.mark.criterion(7, "Monte Carlo risk + KL/lambda stays below the avb value (20 states)")
def test_avb_upper_bounds_variational_objective():
    rng = np.random.default_rng(71)
    priors = [PriorConfig("inv-gamma", 1.3, 0.9, 2),
              PriorConfig("gamma", 1.4, 1.2, 2)]
    for case in range(20):
        prior = priors[case % 2]
        data = random_dataset(rng, m1=5, m2=5, n=10)
        state = random_hinge_state(rng, data, prior, spread=0.8)
        lam = float(data.n)
        mc, se = oracles.mc_hinge_risk(
            state.left, state.right, state.var_left, state.var_right,
            data.rows, data.cols, data.signed_labels,
            samples=20000, seed=7000 + case,
        )
        objective = mc + state_kl(state, prior) / lam
        assert objective <= avb(state, data, prior, lam) + 3.0 * se, case


@pytest.mark.criterion(8, "quadratic logistic bound holds on a 10^4 grid, tight at xi=|x|")
def test_logistic_quadratic_bound():
    xs = np.linspace(-8.0, 8.0, 100)
    xis = np.linspace(1e-6, 9.0, 100)
    x_grid, xi_grid = np.meshgrid(xs, xis)
    lhs = -np.logaddexp(0.0, -x_grid)
    rhs = (-np.logaddexp(0.0, -xi_grid) + (x_grid - xi_grid) / 2.0
           - tau(xi_grid) * (x_grid ** 2 - xi_grid ** 2))
    assert lhs.size == 10_000
    assert np.all(lhs >= rhs - 1e-12)
    tight = np.abs(xs)
    at_tight = (-np.logaddexp(0.0, -tight) + (xs - tight) / 2.0
                - tau(tight) * (xs ** 2 - tight ** 2))
    assert np.max(np.abs(at_tight - (-np.logaddexp(0.0, -xs)))) <= 1e-12


@pytest.mark.criterion(9, "special functions match closed forms and the quadrature oracle")
def test_special_closed_forms():
    euler = 0.5772156649015328606
    assert digamma(1.0) == pytest.approx(-euler, abs=1e-10)
    assert digamma(0.5) == pytest.approx(-euler - 2.0 * math.log(2.0), abs=1e-10)
    harmonic = 0.0
    for n in range(1, 30):
        assert digamma(float(n)) == pytest.approx(-euler + harmonic, rel=1e-10,
                                                  abs=1e-10)
        harmonic += 1.0 / n
    for x in [1e-6, 0.05, 1.0, 7.5, 300.0, 1e7]:
        base = 0.5 * math.log(math.pi / (2.0 * x)) - x
        assert log_bessel_k(0.5, x) == pytest.approx(base, rel=1e-10, abs=1e-10)
        assert log_bessel_k(1.5, x) == pytest.approx(
            base + math.log1p(1.0 / x), rel=1e-10, abs=1e-10
        )
        assert log_bessel_k(2.5, x) == pytest.approx(
            base + math.log(1.0 + 3.0 / x + 3.0 / x / x), rel=1e-10, abs=1e-10
        )


@pytest.mark.criterion(9, "special functions match closed forms and the quadrature oracle")
def test_large_order_bessel():
    rng = np.random.default_rng(91)
    orders = [100.0, 349.7, 1000.0, 1700.3, 2000.0, -2000.0]
    for nu in orders:
        for _ in range(4):
            x = 10.0 ** rng.uniform(-2, 4)
            ref = oracles.log_bessel_k_quad(abs(nu), x)
            assert log_bessel_k(nu, x) == pytest.approx(ref, rel=1e-8)


@pytest.mark.criterion(10, "risk certificate covers held-out risk in >= 95/100 replications")
def test_bound_coverage(bound_replications):
    assert bound_replications["covered"] >= 95, bound_replications["covered"]
