"""第一阶段、TSLS 与岭型后验众数测试。"""

import numpy as np
import pytest

from src.error_types import NumericalError
from src.estimators.closed_form import (
    first_stage,
    ridge_mode_mixture,
    ridge_mode_single,
    ridge_objective,
    tsls,
)
from src.estimators.moments import ModelMoments, summarize_individual
from src.schemas.datasets import IndividualDataset
from src.simulation.simulator import SimulationScenario, simulate


def _random_instance(seed: int, n: int = 200, J: int = 5) -> IndividualDataset:
    data, _ = simulate(SimulationScenario(n=n, J=J, beta=0.2, mu_alpha=0.2, p0=0.5, seed=seed))
    return data


def _noiseless(n: int, J: int, beta: float, alpha: np.ndarray, seed: int = 0) -> IndividualDataset:
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, J))
    Z -= Z.mean(axis=0)
    gamma = rng.uniform(0.1, 0.3, size=J)
    D = Z @ gamma
    return IndividualDataset(Z=Z, D=D, Y=beta * D + Z @ alpha, centered=True)


class TestFirstStage:
    """第一阶段回归测试。"""

    def test_orthonormal_design_exact(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((20, 3)))
        data = IndividualDataset(Z=q, D=q @ np.full(3, 0.2), Y=np.zeros(20))

        fit = first_stage(data)

        np.testing.assert_allclose(fit.gamma_hat, np.full(3, 0.2), atol=1e-12)
        np.testing.assert_allclose(fit.d_hat, data.Z @ fit.gamma_hat, rtol=1e-10)
        assert fit.d_hat_norm2 == pytest.approx(float(fit.d_hat @ fit.d_hat))

    def test_duplicated_column_is_rank_deficient(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal(30)
        data = IndividualDataset(Z=np.column_stack([z, z]), D=rng.standard_normal(30), Y=rng.standard_normal(30))

        with pytest.raises(NumericalError, match="rank deficiency.*eigenvalue"):
            first_stage(data)

    def test_matches_generic_solver(self):
        rng = np.random.default_rng(2)
        Z = rng.standard_normal((50, 3))
        Z -= Z.mean(axis=0)
        gamma = np.array([0.15, 0.2, 0.25])
        data = IndividualDataset(Z=Z, D=Z @ gamma, Y=rng.standard_normal(50))

        fit = first_stage(data)

        np.testing.assert_allclose(fit.gamma_hat, gamma, atol=1e-8)
        np.testing.assert_allclose(fit.gamma_hat, np.linalg.lstsq(Z, data.D, rcond=None)[0], atol=1e-10)


class TestTsls:
    """TSLS 测试。"""

    def test_noiseless_valid_instruments(self):
        data = _noiseless(100, 4, beta=0.2, alpha=np.zeros(4))

        assert tsls(data, first_stage(data)) == pytest.approx(0.2, abs=1e-12)

    def test_zero_outcome(self):
        data = _noiseless(100, 4, beta=0.0, alpha=np.zeros(4))

        assert tsls(data, first_stage(data)) == 0.0

    def test_zero_fitted_exposure(self):
        rng = np.random.default_rng(3)
        data = IndividualDataset(Z=rng.standard_normal((20, 2)), D=np.zeros(20), Y=rng.standard_normal(20))

        with pytest.raises(NumericalError, match="d_hat_norm2"):
            tsls(data, first_stage(data))


class TestRidgeModeSingle:
    """单高斯后验众数测试。"""

    def test_tiny_tau2_pins_alpha(self):
        data = _random_instance(4)
        fit = first_stage(data)

        beta, alpha = ridge_mode_single(data, fit, 0.15, 1e-12, 1.0)

        np.testing.assert_allclose(alpha, np.full(data.J, 0.15), atol=1e-6)
        shifted = IndividualDataset(Z=data.Z, D=data.D, Y=data.Y - data.Z @ np.full(data.J, 0.15))
        assert beta == pytest.approx(tsls(shifted, fit), abs=1e-6)

    def test_huge_tau2_not_worse_than_truth(self):
        alpha_true = np.full(5, 0.1)
        data = _noiseless(120, 5, beta=0.3, alpha=alpha_true, seed=5)
        fit = first_stage(data)

        beta, alpha = ridge_mode_single(data, fit, 0.0, 1e12, 1.0)

        at_min = ridge_objective(data, fit, beta, alpha, 0.0, 1e12, 1.0)
        at_truth = ridge_objective(data, fit, 0.3, alpha_true, 0.0, 1e12, 1.0)
        assert np.all(np.isfinite(alpha))
        assert at_min <= at_truth + 1e-9

    def test_local_optimality_by_probing(self):
        data = _random_instance(6)
        fit = first_stage(data)
        beta, alpha = ridge_mode_single(data, fit, 0.1, 0.05, 1.2)
        base = ridge_objective(data, fit, beta, alpha, 0.1, 0.05, 1.2)
        rng = np.random.default_rng(6)

        for _ in range(1000):
            step = 1e-3 * rng.standard_normal(data.J + 1)
            perturbed = ridge_objective(data, fit, beta + step[0], alpha + step[1:], 0.1, 0.05, 1.2)
            assert perturbed >= base - 1e-9 * base

    def test_exact_recovery_on_noiseless_data(self):
        data = _noiseless(150, 6, beta=0.25, alpha=np.full(6, 0.2), seed=8)

        beta, _ = ridge_mode_single(data, first_stage(data), 0.2, 1e-12, 1.0)

        assert beta == pytest.approx(0.25, abs=1e-6)

    @pytest.mark.parametrize("mode", ["single", "mixture"])
    def test_first_order_optimality(self, mode):
        data = _random_instance(9)
        fit = first_stage(data)
        xi = np.array([1, 0, 1, 0, 1])
        nu0 = 0.05
        if mode == "single":
            beta, alpha = ridge_mode_single(data, fit, 0.1, 0.2, 0.9)
            objective = lambda b, a: ridge_objective(data, fit, b, a, 0.1, 0.2, 0.9)  # noqa: E731
        else:
            beta, alpha = ridge_mode_mixture(data, fit, 0.1, xi, 0.2, 0.9, nu0)
            objective = lambda b, a: ridge_objective(data, fit, b, a, 0.1, 0.2, 0.9, xi, nu0)  # noqa: E731

        point = np.concatenate(([beta], alpha))
        scale = objective(beta, alpha)
        h = 1e-6
        gradient = np.empty_like(point)
        for k in range(point.size):
            up, down = point.copy(), point.copy()
            up[k] += h
            down[k] -= h
            gradient[k] = (objective(up[0], up[1:]) - objective(down[0], down[1:])) / (2 * h)

        assert np.max(np.abs(gradient)) <= 1e-8 * scale * 100


class TestRidgeModeMixture:
    """spike-and-slab 后验众数测试。"""

    def test_all_slab_matches_single(self):
        data = _random_instance(10)
        fit = first_stage(data)

        beta_s, alpha_s = ridge_mode_single(data, fit, 0.2, 0.3, 1.1)
        beta_m, alpha_m = ridge_mode_mixture(data, fit, 0.2, np.ones(data.J), 0.3, 1.1, 0.001)

        assert beta_m == pytest.approx(beta_s, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(alpha_m, alpha_s, rtol=1e-12, atol=1e-12)

    def test_all_spike_pins_alpha_at_zero(self):
        data = _random_instance(11)
        fit = first_stage(data)

        beta, alpha = ridge_mode_mixture(data, fit, 0.2, np.zeros(data.J), 1.0, 1.0, 1e-12)

        np.testing.assert_allclose(alpha, 0.0, atol=1e-6)
        assert beta == pytest.approx(tsls(data, fit), abs=1e-6)

    def test_matches_stacked_least_squares(self):
        """与增广最小二乘的独立求解一致。"""
        for seed in range(50):
            data = _random_instance(100 + seed, n=120, J=6)
            fit = first_stage(data)
            rng = np.random.default_rng(seed)
            xi = (rng.random(data.J) < 0.5).astype(float)
            mu, tau2, sigma2, nu0 = 0.15, 0.1, 0.8, 0.05

            beta, alpha = ridge_mode_mixture(data, fit, mu, xi, tau2, sigma2, nu0)

            weights = nu0 + (1 - nu0) * xi
            penalty_sd = np.sqrt(sigma2 / (tau2 * weights))
            design = np.vstack(
                [
                    np.column_stack([fit.d_hat, data.Z]),
                    np.column_stack([np.zeros(data.J), np.diag(penalty_sd)]),
                ]
            )
            target = np.concatenate([data.Y, penalty_sd * mu * xi])
            oracle = np.linalg.lstsq(design, target, rcond=None)[0]
            np.testing.assert_allclose(np.concatenate(([beta], alpha)), oracle, rtol=1e-8, atol=1e-10)

    def test_rejects_non_binary_xi(self):
        data = _random_instance(12)

        with pytest.raises(ValueError, match="xi"):
            ridge_mode_mixture(data, first_stage(data), 0.2, np.full(data.J, 0.5), 1.0, 1.0, 0.01)


class TestModelMoments:
    """充分矩与汇总统计恒等式测试。"""

    def test_summary_moments_match_individual(self, orthogonal_dataset):
        data = orthogonal_dataset
        fit = first_stage(data)
        s = 1.3
        individual = ModelMoments.from_individual(data, fit)

        summary = ModelMoments.from_summary(summarize_individual(data, sigma2_eta=s))

        np.testing.assert_allclose(summary.ztz, individual.ztz / s, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(summary.ztd_hat, individual.ztd_hat / s, rtol=1e-10)
        np.testing.assert_allclose(summary.zty, individual.zty / s, rtol=1e-10)
        assert summary.dhat_norm2 == pytest.approx(individual.dhat_norm2 / s, rel=1e-10)
        assert summary.dhat_y == pytest.approx(individual.dhat_y / s, rel=1e-10)
        assert summary.fixed_sigma2 == 1.0

    def test_residual_norm_matches_direct(self, small_dataset):
        data, _ = small_dataset
        fit = first_stage(data)
        moments = ModelMoments.from_individual(data, fit)
        alpha = np.linspace(-0.1, 0.1, data.J)

        resid = data.Y - 0.3 * fit.d_hat - data.Z @ alpha

        assert moments.residual_norm2(0.3, alpha) == pytest.approx(float(resid @ resid), rel=1e-9)
