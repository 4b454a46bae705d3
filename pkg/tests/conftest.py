"""Shared factories for synthetic configurations, parameters, and datasets."""

import numpy as np
import pytest

from latentwave.data import simulate
from latentwave.model import ModelConfig, Parameters


def make_config(
    n_profiles=3, n_items=4, n_categories=3, n_covariates=2, n_waves=5, spacing=7.0
):
    times = tuple(float(t) * spacing for t in range(n_waves))
    return ModelConfig(
        n_profiles=n_profiles,
        n_items=n_items,
        n_categories=n_categories,
        n_covariates=n_covariates,
        n_waves=n_waves,
        wave_times=times,
    )


def random_parameters(rng, config, coef_scale=1.0, theta_spread=0.5):
    free = config.n_profiles - 1
    psi = rng.dirichlet(
        np.ones(config.n_categories), size=(config.n_profiles, config.n_items)
    )
    beta = np.zeros((config.n_covariates, config.n_profiles))
    beta[:, 1:] = rng.normal(0.0, coef_scale, size=(config.n_covariates, free))
    eta = np.zeros((config.n_waves, config.n_profiles))
    eta[:, 1:] = rng.normal(0.0, coef_scale, size=(config.n_waves, free))
    theta = np.ones((3, config.n_profiles))
    theta[:, 1:] = rng.lognormal(0.0, theta_spread, size=(3, free))
    params = Parameters(psi, beta, eta, theta)
    params.validate(config)
    return params


def random_dataset(rng_seed, config, n_per_wave=8, coef_scale=0.8):
    rng = np.random.default_rng(rng_seed)
    params = random_parameters(rng, config, coef_scale=coef_scale)
    dataset, latent = simulate(
        params, config, seed=rng_seed + 1, n_per_wave=n_per_wave
    )
    return dataset, params, latent


@pytest.fixture
def small_config():
    return make_config()
