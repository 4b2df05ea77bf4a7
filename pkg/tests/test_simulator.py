"""合成数据与先验抽样测试。"""

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad
from scipy.stats import gamma as gamma_dist
from scipy.stats import norm

from src.error_types import DataValidationError
from src.simulation.simulator import (
    SimulationScenario,
    load_truth,
    marginal_alpha_logpdf,
    mixture_prior_logpdf,
    sample_mixture_prior,
    save_truth,
    simulate,
)


class TestScenario:
    """场景校验测试。"""

    def test_defaults(self):
        scenario = SimulationScenario()

        assert (scenario.n, scenario.J, scenario.beta, scenario.p0) == (1000, 30, 0.2, 0.5)
        assert scenario.label()["inside_ok"] is True

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n": 5, "J": 5},
            {"p0": 1.5},
            {"cov_v_eps": ((1.0, 0.2), (0.3, 1.0))},
            {"cov_v_eps": ((1.0, 2.0), (2.0, 1.0))},
            {"gamma_range": (0.3, 0.1)},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            SimulationScenario(**kwargs)


class TestSimulate:
    """数据生成测试。"""

    def test_same_seed_same_data(self, small_scenario):
        first, _ = simulate(small_scenario)
        second, _ = simulate(small_scenario)

        np.testing.assert_array_equal(first.Z, second.Z)
        np.testing.assert_array_equal(first.Y, second.Y)

    def test_output_is_centered(self, small_dataset):
        data, _ = small_dataset

        assert np.max(np.abs(data.Z.mean(axis=0))) <= 1e-10
        assert abs(data.D.mean()) <= 1e-10
        assert abs(data.Y.mean()) <= 1e-10

    def test_model_identity_holds_on_raw_data(self, small_dataset):
        _, truth = small_dataset
        raw = truth.raw

        np.testing.assert_allclose(raw.D, raw.Z @ truth.gamma + truth.v, atol=1e-12)
        np.testing.assert_allclose(raw.Y, truth.beta * raw.D + raw.Z @ truth.alpha + truth.eps, atol=1e-12)

    def test_valid_instruments_have_zero_alpha(self):
        _, truth = simulate(SimulationScenario(n=50, J=40, p0=0.5, seed=2))

        assert np.all(truth.alpha[truth.xi == 0] == 0.0)
        assert truth.gamma.min() >= 0.1 and truth.gamma.max() < 0.3

    def test_inside_violation_shifts_alpha_with_gamma(self):
        base = SimulationScenario(n=50, J=20, p0=1.0, seed=9)
        _, ok = simulate(base)
        _, violated = simulate(base.model_copy(update={"inside_ok": False}))

        np.testing.assert_allclose(violated.alpha - ok.alpha, 0.2 * ok.gamma, atol=1e-12)

    def test_zero_p0_gives_all_valid(self):
        _, truth = simulate(SimulationScenario(n=50, J=10, p0=0.0, seed=1))

        assert truth.xi.sum() == 0
        np.testing.assert_array_equal(truth.alpha, np.zeros(10))

    def test_noise_correlation(self):
        _, truth = simulate(SimulationScenario(n=1_000_000, J=1, seed=3))

        assert np.corrcoef(truth.v, truth.eps)[0, 1] == pytest.approx(0.2, abs=0.01)

    def test_truth_round_trip(self, tmp_path, small_dataset):
        _, truth = small_dataset

        loaded = load_truth(save_truth(truth, tmp_path / "truth.csv"))

        np.testing.assert_array_equal(loaded.alpha, truth.alpha)
        np.testing.assert_array_equal(loaded.xi, truth.xi)
        assert loaded.beta == truth.beta

    def test_truth_header_checked(self, write_csv):
        path = write_csv("truth.csv", "variant,alpha\n1,0.1\n")

        with pytest.raises(DataValidationError, match="truth header"):
            load_truth(path)


class TestMixturePrior:
    """spike-and-slab 先验抽样与密度测试。"""

    def test_mean_is_p0_times_mu(self):
        draws = sample_mixture_prior(0.2, 0.01, 0.001, 0.8, 100_000, seed=1)
        # Var = p₀τ² + (1−p₀)ν₀τ² + p₀(1−p₀)μ²
        variance = 0.8 * 0.01 + 0.2 * 0.001 * 0.01 + 0.8 * 0.2 * 0.04
        se = np.sqrt(variance / draws.size)

        assert abs(draws.mean() - 0.16) <= 4 * se

    @pytest.mark.parametrize("p0,expected", [(0.0, 0.001 * 0.5), (1.0, 0.5)])
    def test_degenerate_mixtures(self, p0, expected):
        draws = sample_mixture_prior(0.2, 0.5, 0.001, p0, 100_000, seed=2)

        assert draws.var() == pytest.approx(expected, rel=0.05)

    @pytest.mark.parametrize("mu", [0.2, -0.2])
    def test_density_dips_between_modes(self, mu):
        """μ_α = ±0.2、τ² = 0.01 时 0 与 μ_α 之间的密度低于两端。"""
        grid = np.linspace(0.0, mu, 201)

        log_density = mixture_prior_logpdf(grid, mu, 0.01, 0.001, 0.5)

        middle = log_density[1:-1].min()
        assert middle < log_density[0] and middle < log_density[-1]

    def test_centered_slab_is_unimodal(self):
        grid = np.linspace(-0.5, 0.5, 401)

        density = np.exp(mixture_prior_logpdf(grid, 0.0, 0.01, 0.001, 0.5))

        assert np.argmax(density) == 200
        assert np.all(np.diff(density[:201]) >= 0)

    def test_density_integrates_to_one(self):
        value, _ = quad(lambda x: float(np.exp(mixture_prior_logpdf(np.array(x), 0.2, 0.01, 0.1, 0.3))), -2, 2,
                        points=[0.0, 0.2], limit=200)

        assert value == pytest.approx(1.0, abs=1e-6)

    def test_marginal_matches_numerical_integration(self):
        """积掉 τ⁻² 后的边际与数值积分一致。"""
        nu1, nu2, mu = 2.0, 0.4, 0.1

        for x in (-0.3, 0.1, 0.5):
            integrand = lambda w: norm.pdf(x, mu, 1 / np.sqrt(w)) * gamma_dist.pdf(w, nu1, scale=1 / nu2)  # noqa: E731
            expected, _ = quad(integrand, 0, np.inf, limit=200)
            assert np.exp(marginal_alpha_logpdf(np.array(x), mu, nu1, nu2)) == pytest.approx(expected, rel=1e-6)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"count": 0},
            {"tau2": 0.0},
            {"nu0": 1.0},
            {"p0": -0.1},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        params = {"mu_alpha": 0.2, "tau2": 0.01, "nu0": 0.001, "p0": 0.5, "count": 10}
        params.update(kwargs)

        with pytest.raises(ValueError):
            sample_mixture_prior(**params)
