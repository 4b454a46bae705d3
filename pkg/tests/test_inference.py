import numpy as np
import numpy.testing as npt
import pytest

from latentwave.inference import (
    class_membership,
    covariate_effects,
    population_proportions,
    profile_summaries,
    profile_table_to_csv,
    trajectories_to_csv,
)
from latentwave.model import ModelConfig
from latentwave.sampler import PosteriorDraws, SamplerConfig, fit

from conftest import make_config, random_dataset, random_parameters


def draws_from_params(param_list, config, item_labels=None, covariate_labels=None):
    """Stack explicit Parameters into a single-chain PosteriorDraws."""
    psi = np.stack([p.psi for p in param_list])[None, ...]
    beta = np.stack([p.beta for p in param_list])[None, ...]
    eta = np.stack([p.eta for p in param_list])[None, ...]
    theta = np.stack([p.theta for p in param_list])[None, ...]
    return PosteriorDraws(
        config=config,
        psi=psi,
        beta=beta,
        eta=eta,
        theta=theta,
        item_labels=item_labels,
        covariate_labels=covariate_labels,
    )


@pytest.fixture
def tiny_dataset():
    config = make_config(n_profiles=2, n_items=2, n_categories=3, n_covariates=2, n_waves=3)
    dataset, params, _ = random_dataset(5, config, n_per_wave=6)
    return dataset, params, config


class TestProfileSummaries:
    def test_single_draw_equals_that_draw(self, tiny_dataset):
        _, params, config = tiny_dataset
        draws = draws_from_params([params], config)
        table = profile_summaries(draws)
        npt.assert_allclose(table.mean, params.psi, rtol=1e-15)
        npt.assert_allclose(table.lower, params.psi, rtol=1e-12)
        npt.assert_allclose(table.upper, params.psi, rtol=1e-12)

    def test_rows_sum_to_one_and_modal_tie_breaks_low(self):
        config = make_config(n_profiles=1, n_items=1, n_categories=4, n_covariates=1, n_waves=2)
        params = random_parameters(np.random.default_rng(0), config)
        params.psi[0, 0] = np.array([0.3, 0.3, 0.3, 0.1])
        draws = draws_from_params([params], config)
        table = profile_summaries(draws)
        assert table.mean[0, 0].sum() == pytest.approx(1.0, abs=1e-12)
        assert table.modal_category[0, 0] == 1

    def test_interval_brackets_mean(self, tiny_dataset):
        dataset, _, config = tiny_dataset
        draws = fit(
            dataset, config, SamplerConfig(n_warmup=150, n_draws=120, n_chains=1, seed=2)
        )
        table = profile_summaries(draws)
        assert np.all(table.lower <= table.mean + 1e-12)
        assert np.all(table.upper >= table.mean - 1e-12)


class TestCovariateEffects:
    def constant_beta_draws(self, value, config):
        params = random_parameters(np.random.default_rng(1), config)
        params.beta[:, 1:] = value
        return draws_from_params([params, params], config)

    def test_reported_odds_ratios(self):
        config = make_config(n_profiles=2, n_covariates=1)
        table = covariate_effects(self.constant_beta_draws(0.328, config))
        assert table["or_mean"].iloc[0] == pytest.approx(1.388, abs=1e-3)
        table = covariate_effects(self.constant_beta_draws(-0.676, config))
        assert table["or_mean"].iloc[0] == pytest.approx(0.508, abs=1e-3)

    def test_symmetric_draws_give_half_positive(self):
        config = make_config(n_profiles=2, n_covariates=1)
        rng = np.random.default_rng(3)
        params = [random_parameters(rng, config) for _ in range(400)]
        values = rng.standard_normal(400)
        for p, v in zip(params, values):
            p.beta[0, 1] = v
        table = covariate_effects(draws_from_params(params, config))
        assert table["prob_positive"].iloc[0] == pytest.approx(0.5, abs=0.08)

    def test_or_interval_is_exp_of_coefficient_interval(self):
        config = make_config(n_profiles=3, n_covariates=2)
        rng = np.random.default_rng(9)
        params = [random_parameters(rng, config) for _ in range(50)]
        table = covariate_effects(draws_from_params(params, config))
        npt.assert_allclose(table["or_lower"], np.exp(table["lower"]), rtol=1e-12)
        npt.assert_allclose(table["or_upper"], np.exp(table["upper"]), rtol=1e-12)


class TestPopulationProportions:
    def test_single_profile_is_constant_one(self):
        config = make_config(n_profiles=1, n_items=2, n_categories=3, n_covariates=1, n_waves=3)
        dataset, params, _ = random_dataset(8, config, n_per_wave=5)
        draws = draws_from_params([params], config)
        trajectories = population_proportions(
            draws, dataset, np.asarray(config.wave_times)
        )
        npt.assert_allclose(trajectories.mean, 1.0, atol=1e-12)

    def test_mean_of_softmax_not_softmax_of_mean(self):
        config = make_config(n_profiles=2, n_items=2, n_categories=3, n_covariates=1, n_waves=3)
        rng = np.random.default_rng(4)
        pair = []
        for shift in (-3.0, 1.0):
            p = random_parameters(rng, config)
            p.beta[:, 1:] = 0.0
            p.eta[:, 1] = shift
            p.theta[:, 1] = [1.0, 50.0, 1e-10]  # near-interpolating kernel
            pair.append(p)
        draws = draws_from_params(pair, config)
        dataset, _, _ = random_dataset(9, config, n_per_wave=4)
        grid = np.asarray(config.wave_times)
        trajectories = population_proportions(draws, dataset, grid)
        sigmoid = lambda a: np.exp(a) / (1 + np.exp(a))
        expected = 0.5 * (sigmoid(-3.0) + sigmoid(1.0))
        npt.assert_allclose(trajectories.mean[1], expected, atol=1e-3)
        wrong = sigmoid(0.5 * (-3.0 + 1.0))
        assert abs(trajectories.mean[1, 0] - wrong) > 0.05

    def test_proportions_sum_to_one_and_bounds_bracket(self):
        config = make_config(n_profiles=3, n_items=2, n_categories=3, n_covariates=2, n_waves=4)
        rng = np.random.default_rng(11)
        params = [random_parameters(rng, config, theta_spread=0.3) for _ in range(30)]
        draws = draws_from_params(params, config)
        dataset, _, _ = random_dataset(12, config, n_per_wave=5)
        grid = np.linspace(0.0, config.wave_times[-1], 13)
        trajectories = population_proportions(draws, dataset, grid)
        npt.assert_allclose(trajectories.mean.sum(axis=0), 1.0, atol=1e-9)
        assert np.all(trajectories.lower <= trajectories.mean + 1e-12)
        assert np.all(trajectories.upper >= trajectories.mean - 1e-12)

    def test_extrapolation_guard(self):
        config = make_config(n_profiles=2, n_waves=3)
        dataset, params, _ = random_dataset(13, config, n_per_wave=4)
        draws = draws_from_params([params], config)
        with pytest.raises(ValueError, match="extrapolation"):
            population_proportions(draws, dataset, np.array([-30.0]))
        population_proportions(
            draws, dataset, np.array([-30.0]), allow_extrapolation=True
        )


class TestClassMembership:
    def test_single_profile(self):
        config = make_config(n_profiles=1, n_items=2, n_categories=3, n_covariates=1, n_waves=2)
        params = random_parameters(np.random.default_rng(1), config)
        draws = draws_from_params([params], config)
        out = class_membership(draws, np.array([1, 2]), np.zeros(1), 0.0)
        npt.assert_allclose(out, [1.0])

    def test_identical_psi_returns_average_membership(self):
        config = make_config(n_profiles=3, n_items=2, n_categories=3, n_covariates=2, n_waves=2)
        rng = np.random.default_rng(6)
        params = [random_parameters(rng, config) for _ in range(20)]
        for p in params:
            p.psi[1:] = p.psi[0]
        draws = draws_from_params(params, config)
        x = rng.normal(size=2)
        out = class_membership(draws, np.array([1, 2]), x, 0.0)
        nus = []
        for p in params:
            pred = p.eta[0] + p.beta.T @ x
            nu = np.exp(pred - pred.max())
            nus.append(nu / nu.sum())
        npt.assert_allclose(out, np.mean(nus, axis=0), rtol=1e-10)

    def test_single_draw_matches_hand_bayes(self):
        config = make_config(n_profiles=2, n_items=2, n_categories=3, n_covariates=2, n_waves=2)
        rng = np.random.default_rng(7)
        params = random_parameters(rng, config)
        draws = draws_from_params([params], config)
        x = rng.normal(size=2)
        y = np.array([2, 3])
        t = config.wave_times[1]
        pred = params.eta[1] + params.beta.T @ x
        nu = np.exp(pred - pred.max())
        nu /= nu.sum()
        joint = nu * np.array(
            [params.psi[h, 0, 1] * params.psi[h, 1, 2] for h in range(2)]
        )
        expected = joint / joint.sum()
        out = class_membership(draws, y, x, t)
        npt.assert_allclose(out, expected, atol=1e-12)

    def test_invariant_to_common_psi_rescaling(self):
        config = make_config(n_profiles=2, n_items=2, n_categories=3, n_covariates=1, n_waves=2)
        params = random_parameters(np.random.default_rng(8), config)
        draws = draws_from_params([params], config)
        scaled = draws_from_params([params], config)
        scaled.psi = scaled.psi * 2.0
        y, x = np.array([1, 3]), np.zeros(1)
        npt.assert_allclose(
            class_membership(draws, y, x, 0.0),
            class_membership(scaled, y, x, 0.0),
            rtol=1e-12,
        )

    def test_off_wave_time_uses_smoother(self):
        config = make_config(n_profiles=2, n_items=1, n_categories=2, n_covariates=1, n_waves=3)
        params = random_parameters(np.random.default_rng(9), config)
        draws = draws_from_params([params], config)
        out = class_membership(draws, np.array([1]), np.zeros(1), 3.5)
        assert out.shape == (2,)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)


class TestCsvWriters:
    def test_profile_table_layout(self, tmp_path, tiny_dataset):
        _, params, config = tiny_dataset
        table = profile_summaries(draws_from_params([params], config))
        path = tmp_path / "profiles.csv"
        profile_table_to_csv(table, path)
        header = path.read_text().splitlines()[0].split(",")
        assert header[:2] == ["item", "category"]
        assert "profile1_mean" in header and "profile2_mean" in header
        assert len(path.read_text().splitlines()) == 1 + config.n_items * config.n_categories

    def test_trajectories_iso_dates(self, tmp_path, tiny_dataset):
        dataset, params, config = tiny_dataset
        draws = draws_from_params([params], config)
        trajectories = population_proportions(
            draws, dataset, np.asarray(config.wave_times)
        )
        path = tmp_path / "trajectories.csv"
        trajectories_to_csv(trajectories, path, origin_date="2020-04-02")
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[0] == "date"
        assert lines[1].startswith("2020-04-02,")
