"""充分矩模块。

第一阶段之后的所有估计量只依赖 ZᵀZ、ZᵀD̂、ZᵀY、D̂ᵀD̂、D̂ᵀY（以及 σ²_η 更新
所需的 YᵀY）。个体数据与汇总统计都归约到同一个 ModelMoments，
汇总模式下 σ²_η 已被吸收进统计量，固定为 1。
"""

from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from src.error_types import DataValidationError
from src.schemas.datasets import IndividualDataset, SummaryDataset


@dataclass(frozen=True)
class ModelMoments:
    """估计所需的样本矩。

    Attributes:
        ztz: ZᵀZ（汇总模式为 Σ_Ω⁻¹）
        ztd_hat: ZᵀD̂
        zty: ZᵀY
        dhat_norm2: D̂ᵀD̂
        dhat_y: D̂ᵀY
        gamma_hat: 第一阶段系数 γ̂（汇总模式为 γ̃⁽²⁾）
        y_norm2: YᵀY，汇总模式下不可用
        n: 样本量，汇总模式下不可用
        fixed_sigma2: 固定的 σ²_η；None 表示由 Gibbs 抽样
    """

    ztz: np.ndarray
    ztd_hat: np.ndarray
    zty: np.ndarray
    dhat_norm2: float
    dhat_y: float
    gamma_hat: np.ndarray
    y_norm2: float | None = None
    n: int | None = None
    fixed_sigma2: float | None = None

    @property
    def J(self) -> int:
        return int(self.ztz.shape[0])

    @property
    def samples_sigma2(self) -> bool:
        return self.fixed_sigma2 is None

    @classmethod
    def from_individual(cls, data: IndividualDataset, fit: Any) -> "ModelMoments":
        Z = np.asarray(data.Z)
        Y = np.asarray(data.Y)
        d_hat = np.asarray(fit.d_hat)
        ztz = Z.T @ Z
        return cls(
            ztz=0.5 * (ztz + ztz.T),
            ztd_hat=Z.T @ d_hat,
            zty=Z.T @ Y,
            dhat_norm2=float(fit.d_hat_norm2),
            dhat_y=float(d_hat @ Y),
            gamma_hat=np.asarray(fit.gamma_hat, dtype=float),
            y_norm2=float(Y @ Y),
            n=data.n,
        )

    @classmethod
    def from_summary(cls, summary: SummaryDataset) -> "ModelMoments":
        """按矩替换恒等式构造：ZᵀZ/σ² → Σ⁻¹，ZᵀD̂/σ² → Σ⁻¹γ̃，ZᵀY/σ² → Σ⁻¹Ω̃，
        D̂ᵀD̂/σ² → γ̃ᵀΣ⁻¹γ̃，D̂ᵀY/σ² → γ̃ᵀΣ⁻¹Ω̃。"""
        precision = np.asarray(summary.sigma_omega_inv)
        gamma2 = np.asarray(summary.gamma2)
        omega = np.asarray(summary.omega)
        return cls(
            ztz=np.diag(precision),
            ztd_hat=precision * gamma2,
            zty=precision * omega,
            dhat_norm2=float(gamma2 @ (precision * gamma2)),
            dhat_y=float(gamma2 @ (precision * omega)),
            gamma_hat=gamma2.copy(),
            y_norm2=None,
            n=None,
            fixed_sigma2=1.0,
        )

    def with_fixed_sigma2(self, sigma2_eta: float | None) -> "ModelMoments":
        if sigma2_eta is None:
            return self
        return replace(self, fixed_sigma2=float(sigma2_eta))

    def residual_norm2(self, beta: float, alpha: np.ndarray) -> float:
        """‖Y − D̂β − Zα‖²，由矩展开计算，截断在 0 以上。"""
        if self.y_norm2 is None:
            raise DataValidationError("residual norm needs YᵀY, which summary statistics do not carry")
        value = (
            self.y_norm2
            - 2.0 * beta * self.dhat_y
            - 2.0 * float(alpha @ self.zty)
            + beta * beta * self.dhat_norm2
            + 2.0 * beta * float(alpha @ self.ztd_hat)
            + float(alpha @ self.ztz @ alpha)
        )
        return max(value, 0.0)

    def outcome_variance(self) -> float | None:
        """Y 的样本方差（数据已中心化）。"""
        if self.y_norm2 is None or self.n is None or self.n < 2:
            return None
        return self.y_norm2 / (self.n - 1)


def summarize_individual(
    data: IndividualDataset,
    sigma2_eta: float | None = None,
) -> SummaryDataset:
    """由个体数据计算逐位点边际回归汇总统计。

    γ̃ⱼ = ZⱼᵀD / ZⱼᵀZⱼ，Ω̃ⱼ = ZⱼᵀY / ZⱼᵀZⱼ，σ̃²_Ω,ⱼ = σ² / ZⱼᵀZⱼ；
    σ² 未给出时取 TSLS 残差方差。
    """
    from src.estimators.closed_form import first_stage, tsls

    Z = np.asarray(data.Z)
    col_norm2 = np.einsum("ij,ij->j", Z, Z)
    if np.any(col_norm2 <= 0):
        raise DataValidationError("dimension mismatch: instrument column with zero variance")
    gamma = (Z.T @ np.asarray(data.D)) / col_norm2
    omega = (Z.T @ np.asarray(data.Y)) / col_norm2
    if sigma2_eta is None:
        fit = first_stage(data)
        beta = tsls(data, fit)
        resid = np.asarray(data.Y) - beta * np.asarray(fit.d_hat)
        sigma2_eta = float(resid @ resid) / max(data.n - 1, 1)
    return SummaryDataset(gamma2=gamma, omega=omega, sigma2_omega=sigma2_eta / col_norm2)


__all__ = ["ModelMoments", "summarize_individual"]
