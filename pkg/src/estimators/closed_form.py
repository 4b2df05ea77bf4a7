"""闭式估计模块。

第一阶段回归、TSLS，以及两种先验下的岭型后验众数。
所有函数都是不可变输入上的纯函数，可并发调用。
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from src.error_types import NumericalError
from src.estimators.moments import ModelMoments
from src.schemas.datasets import IndividualDataset

logger = logging.getLogger(__name__)

# 需要求逆的地方统一使用的相对近奇异阈值
SINGULAR_RTOL = 1e-10


@dataclass(frozen=True)
class FirstStageFit:
    """第一阶段最小二乘拟合结果。

    Attributes:
        gamma_hat: γ̂ = (ZᵀZ)⁻¹ZᵀD
        d_hat: D̂ = Zγ̂
        d_hat_norm2: D̂ᵀD̂
    """

    gamma_hat: np.ndarray
    d_hat: np.ndarray
    d_hat_norm2: float


def _check_gram(gram: np.ndarray, name: str) -> None:
    eigenvalues = linalg.eigvalsh(gram)
    smallest, largest = float(eigenvalues[0]), float(eigenvalues[-1])
    if largest <= 0 or smallest <= SINGULAR_RTOL * largest:
        raise NumericalError(
            f"rank deficiency: {name} has eigenvalue {smallest:.6g} "
            f"(largest {largest:.6g}, threshold {SINGULAR_RTOL:g} relative)"
        )


def first_stage(data: IndividualDataset) -> FirstStageFit:
    """最小二乘第一阶段：D 对 Z 回归。

    Raises:
        NumericalError: ZᵀZ 奇异（最小特征值 ≤ 1e-10 × 最大特征值）
    """
    Z = np.asarray(data.Z)
    ztz = Z.T @ Z
    ztz = 0.5 * (ztz + ztz.T)
    _check_gram(ztz, "ZᵀZ")
    gamma_hat = linalg.cho_solve(linalg.cho_factor(ztz), Z.T @ np.asarray(data.D))
    d_hat = Z @ gamma_hat
    fit = FirstStageFit(gamma_hat=gamma_hat, d_hat=d_hat, d_hat_norm2=float(d_hat @ d_hat))
    logger.debug("estimator.first_stage n=%s J=%s d_hat_norm2=%.6g", data.n, data.J, fit.d_hat_norm2)
    return fit


def tsls(data: IndividualDataset, fit: FirstStageFit) -> float:
    """两阶段最小二乘：β̂ = D̂ᵀY / D̂ᵀD̂。"""
    if not fit.d_hat_norm2 > 0:
        raise NumericalError("zero d_hat_norm2: first-stage fitted exposure is identically zero")
    return float(np.asarray(fit.d_hat) @ np.asarray(data.Y)) / fit.d_hat_norm2


def spike_slab_weights(xi: np.ndarray, nu0: float) -> np.ndarray:
    """Γ_ξ 对角元相对 τ² 的比例 ν₀ + (1−ν₀)ξⱼ。"""
    xi = np.asarray(xi, dtype=float)
    if np.any((xi != 0.0) & (xi != 1.0)):
        raise ValueError(f"xi entries must be 0 or 1, got {xi}")
    return nu0 + (1.0 - nu0) * xi


def ridge_mode_from_moments(
    moments: ModelMoments,
    prior_mean: np.ndarray,
    prior_var: np.ndarray,
    sigma2_eta: float,
) -> tuple[float, np.ndarray]:
    """在矩上求解 (J+1) 阶分块系统，得到岭型目标的精确最小点。

    目标为 ‖Y − D̂β − Zα‖²/σ² + Σⱼ(αⱼ − mⱼ)²/vⱼ，只惩罚 α，不惩罚 β。

    Args:
        moments: 样本矩
        prior_mean: α 的先验均值向量 m
        prior_var: α 的先验方差向量 v（Γ 的对角元）
        sigma2_eta: σ²_η

    Returns:
        (β̂, α̂)
    """
    if not moments.dhat_norm2 > 0:
        raise NumericalError("singular block system: d_hat_norm2 is zero")
    if not sigma2_eta > 0 or np.any(~(np.asarray(prior_var) > 0)):
        raise ValueError("ridge mode requires positive tau2 and sigma2_eta")
    J = moments.J
    precision = 1.0 / np.asarray(prior_var, dtype=float)
    system = np.empty((J + 1, J + 1))
    system[0, 0] = moments.dhat_norm2 / sigma2_eta
    system[0, 1:] = moments.ztd_hat / sigma2_eta
    system[1:, 0] = moments.ztd_hat / sigma2_eta
    system[1:, 1:] = moments.ztz / sigma2_eta + np.diag(precision)
    rhs = np.concatenate(([moments.dhat_y / sigma2_eta], moments.zty / sigma2_eta + precision * prior_mean))

    try:
        solution = linalg.cho_solve(linalg.cho_factor(system), rhs)
    except linalg.LinAlgError:
        logger.warning("estimator.ridge cholesky failed, falling back to least squares J=%s", J)
        solution = linalg.lstsq(system, rhs)[0]
    if not np.all(np.isfinite(solution)):
        raise NumericalError("singular block system: solution is not finite")
    return float(solution[0]), solution[1:]


def ridge_mode_single(
    data: IndividualDataset,
    fit: FirstStageFit,
    mu_alpha: float,
    tau2: float,
    sigma2_eta: float,
) -> tuple[float, np.ndarray]:
    """单高斯先验 α ~ N(μ_α·1, τ²I) 下的后验众数。"""
    if not tau2 > 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    moments = ModelMoments.from_individual(data, fit)
    J = moments.J
    return ridge_mode_from_moments(moments, np.full(J, float(mu_alpha)), np.full(J, float(tau2)), sigma2_eta)


def ridge_mode_mixture(
    data: IndividualDataset,
    fit: FirstStageFit,
    mu_alpha: float,
    xi: np.ndarray,
    tau2: float,
    sigma2_eta: float,
    nu0: float,
) -> tuple[float, np.ndarray]:
    """给定 ξ 的 spike-and-slab 先验下的后验众数。

    ξⱼ = 1 的分量先验为 N(μ_α, τ²)，ξⱼ = 0 的分量为 N(0, ν₀τ²)。
    """
    if not tau2 > 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    if not 0.0 < nu0 <= 1.0:
        raise ValueError(f"nu0 must lie in (0, 1], got {nu0}")
    moments = ModelMoments.from_individual(data, fit)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (moments.J,):
        raise ValueError(f"xi must have length {moments.J}, got shape {xi.shape}")
    weights = spike_slab_weights(xi, nu0)
    return ridge_mode_from_moments(moments, float(mu_alpha) * xi, weights * float(tau2), sigma2_eta)


def ridge_objective(
    data: IndividualDataset,
    fit: FirstStageFit,
    beta: float,
    alpha: np.ndarray,
    mu_alpha: float,
    tau2: float,
    sigma2_eta: float,
    xi: np.ndarray | None = None,
    nu0: float = 1.0,
) -> float:
    """岭型目标 ‖Y − D̂β − Zα‖² + (σ²/τ²)Σⱼ(αⱼ − μ_αξⱼ)²/(ν₀ + (1−ν₀)ξⱼ)。

    xi 为 None 时按单高斯先验计算。
    """
    alpha = np.asarray(alpha, dtype=float)
    if xi is None:
        xi = np.ones_like(alpha)
        nu0 = 1.0
    weights = spike_slab_weights(xi, nu0)
    resid = np.asarray(data.Y) - beta * np.asarray(fit.d_hat) - np.asarray(data.Z) @ alpha
    penalty = np.sum((alpha - mu_alpha * np.asarray(xi, dtype=float)) ** 2 / weights)
    return float(resid @ resid + sigma2_eta / tau2 * penalty)


__all__ = [
    "FirstStageFit",
    "SINGULAR_RTOL",
    "first_stage",
    "tsls",
    "ridge_mode_from_moments",
    "ridge_mode_single",
    "ridge_mode_mixture",
    "ridge_objective",
    "spike_slab_weights",
]
