"""Shared helpers for building random fixtures in the test suite."""

import numpy as np

from bitmc.hinge_vb import FactorizationState, scale_statistics
from bitmc.model import Dataset, PriorConfig
from bitmc.scales import fit_scale_posterior


def random_dataset(rng, m1=5, m2=4, n=14) -> Dataset:
    return Dataset(
        m1,
        m2,
        rng.integers(0, m1, n),
        rng.integers(0, m2, n),
        rng.choice([-1, 1], n),
    )


def random_hinge_state(rng, data: Dataset, prior: PriorConfig, spread=1.0) -> FactorizationState:
    k = prior.k
    left = rng.normal(0.0, spread, (data.m1, k))
    right = rng.normal(0.0, spread, (data.m2, k))
    var_left = rng.uniform(0.02, 1.5, (data.m1, k))
    var_right = rng.uniform(0.02, 1.5, (data.m2, k))
    scales = tuple(
        fit_scale_posterior(float(s), prior, data.m1, data.m2)
        for s in scale_statistics(left, right, var_left, var_right)
    )
    return FactorizationState(left, right, var_left, var_right, scales)


def state_moment_lists(state):
    return (
        [s.mean_inv for s in state.scales],
        [s.mean_log for s in state.scales],
        [s.kl_to_prior for s in state.scales],
    )
