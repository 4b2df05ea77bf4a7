"""误差界诊断模块。

计算正则性常数 c*（单高斯先验）与 c**（混合先验），以及 β̂ 绝对误差上界的
三个分项：收缩偏差项、投影噪声项、内生性项。
上界需要真实 α 与实现的 η̂，只在模拟场景下给出；真实数据只报告常数。
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from src.error_types import NumericalError
from src.estimators.closed_form import SINGULAR_RTOL, FirstStageFit, spike_slab_weights
from src.estimators.moments import ModelMoments
from src.schemas.datasets import IndividualDataset

logger = logging.getLogger(__name__)

PriorMode = Literal["single", "mixture"]


@dataclass(frozen=True)
class BoundTerms:
    """误差上界的三个分项。"""

    shrinkage: float
    projection: float
    endogeneity: float

    @property
    def total(self) -> float:
        return self.shrinkage + self.projection + self.endogeneity


@dataclass(frozen=True)
class DiagnosticsReport:
    """诊断结果。

    Attributes:
        c_star: 单高斯先验下 AB⁻¹ 的最大特征值
        c_double_star: 混合先验下 AB_ξ⁻¹ 的最大特征值，单高斯模式为 None
        bound_terms: 三个上界分项；条件不满足或缺真值时为 None
        bound_total: 分项之和，bound_terms 为 None 时同为 None
        assumption_ok: 所用常数是否落在 (0, 1)
        mode: single 或 mixture
    """

    c_star: float
    c_double_star: float | None
    bound_terms: BoundTerms | None
    bound_total: float | None
    assumption_ok: bool
    mode: PriorMode = "single"

    @property
    def constant(self) -> float:
        """当前模式对应的常数。"""
        if self.mode == "mixture" and self.c_double_star is not None:
            return self.c_double_star
        return self.c_star

    def as_row(self) -> dict[str, float | bool | None]:
        """展平为结果表的一行，不适用的分项为 None。"""
        terms = self.bound_terms
        return {
            "c_star": self.c_star,
            "c_double_star": self.c_double_star,
            "bound_shrinkage": terms.shrinkage if terms else None,
            "bound_projection": terms.projection if terms else None,
            "bound_endogeneity": terms.endogeneity if terms else None,
            "bound_total": self.bound_total,
            "assumption_ok": self.assumption_ok,
        }


def _inverse_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, vectors = linalg.eigh(matrix)
    if eigenvalues[-1] <= 0 or eigenvalues[0] <= SINGULAR_RTOL * eigenvalues[-1]:
        raise NumericalError(
            f"non-positive-definite B: smallest eigenvalue {eigenvalues[0]:.6g}, largest {eigenvalues[-1]:.6g}"
        )
    return (vectors / np.sqrt(eigenvalues)) @ vectors.T


def regularity_constant(moments: ModelMoments, prior_var: np.ndarray, sigma2_eta: float) -> float:
    """AB⁻¹ 的最大特征值。

    A = ZᵀP_D̂Z/(nσ²)，B = (ZᵀZ/σ² + Γ⁻¹)/n，Γ 为对角先验方差；
    n 在 AB⁻¹ 中相消。特征值在对称相似矩阵 B^{-1/2}AB^{-1/2} 上计算。
    """
    if not sigma2_eta > 0:
        raise ValueError(f"sigma2_eta must be positive, got {sigma2_eta}")
    if not moments.dhat_norm2 > 0:
        raise NumericalError("zero d_hat_norm2: projection onto D̂ is undefined")
    a_matrix = np.outer(moments.ztd_hat, moments.ztd_hat) / (moments.dhat_norm2 * sigma2_eta)
    b_matrix = moments.ztz / sigma2_eta + np.diag(1.0 / np.asarray(prior_var, dtype=float))
    b_inv_sqrt = _inverse_sqrt(0.5 * (b_matrix + b_matrix.T))
    similar = b_inv_sqrt @ a_matrix @ b_inv_sqrt
    return float(linalg.eigvalsh(0.5 * (similar + similar.T))[-1])


def realized_eta(data: IndividualDataset, fit: FirstStageFit, beta: float, alpha: np.ndarray) -> np.ndarray:
    """η̂ = Y − βD̂ − Zα（中心化数据上等于 ε + βv̂）。"""
    return np.asarray(data.Y) - beta * np.asarray(fit.d_hat) - np.asarray(data.Z) @ np.asarray(alpha)


def _bound_terms(
    moments: ModelMoments,
    constant: float,
    prior_var: np.ndarray,
    prior_mean: np.ndarray,
    sigma2_eta: float,
    alpha_true: np.ndarray,
    zt_eta: np.ndarray,
    dhat_eta: float,
) -> BoundTerms:
    dd = moments.dhat_norm2
    gamma_norm = float(np.linalg.norm(moments.gamma_hat))
    ratio = constant / (1.0 - constant)
    shrink = float(np.linalg.norm((np.asarray(alpha_true) - prior_mean) / prior_var))
    projected = zt_eta - moments.ztd_hat * (dhat_eta / dd)
    return BoundTerms(
        shrinkage=ratio * sigma2_eta * gamma_norm * shrink / dd,
        projection=ratio * gamma_norm * float(np.linalg.norm(projected)) / dd,
        endogeneity=abs(dhat_eta) / dd,
    )


def diagnostics_from_moments(
    moments: ModelMoments,
    tau2: float,
    sigma2_eta: float,
    mode: PriorMode = "single",
    xi: np.ndarray | None = None,
    nu0: float | None = None,
    mu_alpha: float = 0.0,
    alpha_true: np.ndarray | None = None,
    eta_products: tuple[np.ndarray, float] | None = None,
) -> DiagnosticsReport:
    """在样本矩上计算诊断。

    Args:
        eta_products: (Zᵀη̂, D̂ᵀη̂)，与 alpha_true 同时给出时才计算上界分项
    """
    if not tau2 > 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    J = moments.J
    single_var = np.full(J, float(tau2))
    c_star = regularity_constant(moments, single_var, sigma2_eta)

    c_double_star: float | None = None
    prior_var = single_var
    prior_mean = np.full(J, float(mu_alpha))
    if mode == "mixture":
        if xi is None or nu0 is None:
            raise ValueError("mixture diagnostics need xi and nu0")
        xi = np.asarray(xi, dtype=float)
        prior_var = spike_slab_weights(xi, nu0) * tau2
        prior_mean = float(mu_alpha) * xi
        c_double_star = regularity_constant(moments, prior_var, sigma2_eta)
    elif mode != "single":
        raise ValueError(f"unknown prior mode {mode!r}")

    constant = c_double_star if c_double_star is not None else c_star
    assumption_ok = 0.0 < constant < 1.0

    terms: BoundTerms | None = None
    if assumption_ok and alpha_true is not None and eta_products is not None:
        zt_eta, dhat_eta = eta_products
        terms = _bound_terms(
            moments, constant, prior_var, prior_mean, sigma2_eta, alpha_true, np.asarray(zt_eta), float(dhat_eta)
        )
    elif not assumption_ok:
        logger.warning("diagnostics.assumption violated mode=%s constant=%.6g", mode, constant)

    return DiagnosticsReport(
        c_star=c_star,
        c_double_star=c_double_star,
        bound_terms=terms,
        bound_total=terms.total if terms else None,
        assumption_ok=assumption_ok,
        mode=mode,
    )


def diagnostics(
    data: IndividualDataset,
    fit: FirstStageFit,
    tau2: float,
    sigma2_eta: float,
    mode: PriorMode = "single",
    xi: np.ndarray | None = None,
    nu0: float | None = None,
    alpha_true: np.ndarray | None = None,
    mu_alpha: float = 0.0,
    eta_hat: np.ndarray | None = None,
) -> DiagnosticsReport:
    """个体数据上的诊断；给出 alpha_true 与 eta_hat 时附带误差上界。"""
    moments = ModelMoments.from_individual(data, fit)
    eta_products = None
    if eta_hat is not None:
        eta = np.asarray(eta_hat, dtype=float)
        if eta.shape != (data.n,):
            raise ValueError(f"eta_hat must have length {data.n}, got shape {eta.shape}")
        eta_products = (np.asarray(data.Z).T @ eta, float(np.asarray(fit.d_hat) @ eta))
    return diagnostics_from_moments(
        moments,
        tau2,
        sigma2_eta,
        mode=mode,
        xi=xi,
        nu0=nu0,
        mu_alpha=mu_alpha,
        alpha_true=alpha_true,
        eta_products=eta_products,
    )


__all__ = [
    "BoundTerms",
    "DiagnosticsReport",
    "diagnostics",
    "diagnostics_from_moments",
    "realized_eta",
    "regularity_constant",
]
