"""合成数据模块。

按线性模型生成数据：Z ~ N(0, I)，γⱼ ~ U[γ_lo, γ_hi]，ξⱼ ~ Ber(p₀)，
uⱼ ~ U[μ_α − h, μ_α + h]；InSIDE 成立时 αⱼ = ξⱼuⱼ，否则 αⱼ = (kγⱼ + uⱼ)ξⱼ；
(v, ε) 服从给定协方差的二元正态；D = Zγ + v，Y = βD + Zα + ε。
另提供 spike-and-slab 先验抽样及其密度，用于画先验形状。
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from scipy.special import logsumexp
from scipy.stats import norm, t

from src.core.ingest import center_columns, write_frame
from src.error_types import DataValidationError
from src.rng import SeededGenerator, draw_bernoulli, draw_normal, draw_uniform
from src.schemas.datasets import IndividualDataset

logger = logging.getLogger(__name__)


class SimulationScenario(BaseModel):
    """一个模拟场景。

    p0 是无效工具变量的比例（ξⱼ = 1 的概率）。
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(default=1000, ge=2)
    J: int = Field(default=30, ge=1)
    beta: float = 0.2
    mu_alpha: float = 0.2
    p0: float = Field(default=0.5, ge=0.0, le=1.0)
    inside_ok: bool = True
    cov_v_eps: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.2), (0.2, 1.0))
    gamma_range: tuple[float, float] = (0.1, 0.3)
    seed: int = Field(default=0, ge=0, lt=2**64)
    pleiotropy_halfwidth: float = Field(default=0.2, gt=0.0)
    inside_violation_coef: float = 0.2

    @model_validator(mode="after")
    def _check(self) -> "SimulationScenario":
        if self.n < self.J + 1:
            raise ValueError(f"n ≤ J: n={self.n}, J={self.J}")
        cov = np.asarray(self.cov_v_eps, dtype=float)
        if not np.allclose(cov, cov.T):
            raise ValueError("cov_v_eps must be symmetric")
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("cov_v_eps must be positive definite")
        lo, hi = self.gamma_range
        if not lo < hi:
            raise ValueError(f"gamma_range must satisfy lo < hi, got {self.gamma_range}")
        return self

    def label(self) -> dict[str, object]:
        """结果表中的场景列。"""
        return {
            "n": self.n,
            "J": self.J,
            "beta": self.beta,
            "mu_alpha": self.mu_alpha,
            "p0": self.p0,
            "inside_ok": self.inside_ok,
        }


@dataclass(frozen=True)
class SimulationTruth:
    """真值参数；v、eps 与未中心化数据只在模拟时保留，用于模型恒等式检查。"""

    beta: float
    gamma: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    v: np.ndarray | None = None
    eps: np.ndarray | None = None
    raw: IndividualDataset | None = None


def simulate(scenario: SimulationScenario) -> tuple[IndividualDataset, SimulationTruth]:
    """生成一份中心化数据集与真值；同一种子结果完全相同。"""
    gen = SeededGenerator(scenario.seed)
    n, J = scenario.n, scenario.J

    Z = draw_normal(gen, 0.0, 1.0, size=(n, J))
    gamma = draw_uniform(gen, scenario.gamma_range[0], scenario.gamma_range[1], size=J)
    xi = np.asarray(draw_bernoulli(gen, np.full(J, scenario.p0)), dtype=np.int8)
    h = scenario.pleiotropy_halfwidth
    u = draw_uniform(gen, scenario.mu_alpha - h, scenario.mu_alpha + h, size=J)
    if scenario.inside_ok:
        alpha = xi * u
    else:
        alpha = (scenario.inside_violation_coef * gamma + u) * xi

    chol = linalg.cholesky(np.asarray(scenario.cov_v_eps, dtype=float), lower=True)
    noise = draw_normal(gen, 0.0, 1.0, size=(n, 2)) @ chol.T
    v, eps = noise[:, 0], noise[:, 1]

    D = Z @ gamma + v
    Y = scenario.beta * D + Z @ alpha + eps
    raw = IndividualDataset(Z=Z, D=D, Y=Y)
    truth = SimulationTruth(
        beta=scenario.beta, gamma=gamma, alpha=np.asarray(alpha, dtype=float), xi=xi, v=v, eps=eps, raw=raw
    )
    logger.debug(
        "simulation.dataset seed=%s n=%s J=%s invalid=%s", scenario.seed, n, J, int(xi.sum())
    )
    return center_columns(raw), truth


def sample_mixture_prior(
    mu_alpha: float,
    tau2: float,
    nu0: float,
    p0: float,
    count: int,
    generator: SeededGenerator | None = None,
    seed: int = 0,
) -> np.ndarray:
    """从 spike-and-slab 先验独立抽样：ξ ~ Ber(p₀)，α | ξ ~ N(μ_αξ, (ν₀ + (1−ν₀)ξ)τ²)。"""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    if not tau2 > 0 or not 0.0 < nu0 < 1.0 or not 0.0 <= p0 <= 1.0:
        raise ValueError(f"invalid prior parameters tau2={tau2}, nu0={nu0}, p0={p0}")
    gen = generator or SeededGenerator(seed)
    xi = np.asarray(draw_bernoulli(gen, np.full(count, p0)), dtype=float)
    variance = (nu0 + (1.0 - nu0) * xi) * tau2
    return mu_alpha * xi + np.sqrt(variance) * draw_normal(gen, 0.0, 1.0, size=count)


def mixture_prior_logpdf(x: np.ndarray, mu_alpha: float, tau2: float, nu0: float, p0: float) -> np.ndarray:
    """spike-and-slab 先验的对数密度。"""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        weights = np.log([p0, 1.0 - p0])
    components = np.stack(
        [
            norm.logpdf(x, loc=mu_alpha, scale=np.sqrt(tau2)),
            norm.logpdf(x, loc=0.0, scale=np.sqrt(nu0 * tau2)),
        ]
    )
    return logsumexp(components + weights.reshape((2,) + (1,) * x.ndim), axis=0)


def marginal_alpha_logpdf(x: np.ndarray, mu_alpha: float, nu1: float, nu2: float) -> np.ndarray:
    """积掉 τ⁻² ~ Gamma(ν₁, ν₂) 后 αⱼ 的边际：自由度 2ν₁、尺度² ν₂/ν₁ 的 Student t。"""
    return t.logpdf(np.asarray(x, dtype=float), df=2.0 * nu1, loc=mu_alpha, scale=np.sqrt(nu2 / nu1))


def save_truth(truth: SimulationTruth, path: str | Path) -> Path:
    """写出逐变异位点的真值表：variant, gamma, alpha, xi, beta。"""
    J = truth.gamma.shape[0]
    frame = pd.DataFrame(
        {
            "variant": np.arange(1, J + 1),
            "gamma": truth.gamma,
            "alpha": truth.alpha,
            "xi": np.asarray(truth.xi, dtype=int),
            "beta": np.full(J, truth.beta),
        }
    )
    return write_frame(frame, path)


def load_truth(path: str | Path) -> SimulationTruth:
    """读取 save_truth 写出的真值表。"""
    file_path = Path(path)
    if not file_path.exists():
        raise DataValidationError(f"file not found: {file_path}")
    try:
        frame = pd.read_csv(file_path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataValidationError(f"parse failure in {file_path}: {exc}") from exc
    expected = ["variant", "gamma", "alpha", "xi", "beta"]
    if list(frame.columns) != expected:
        raise DataValidationError(f"parse failure: truth header must be {','.join(expected)}")
    if len(frame) == 0:
        raise DataValidationError("no variants: truth file has no rows")
    values = frame[["gamma", "alpha", "xi", "beta"]].to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataValidationError("non-finite entry in truth file")
    return SimulationTruth(
        beta=float(frame["beta"].iloc[0]),
        gamma=frame["gamma"].to_numpy(dtype=float),
        alpha=frame["alpha"].to_numpy(dtype=float),
        xi=frame["xi"].to_numpy(dtype=np.int8),
    )


__all__ = [
    "SimulationScenario",
    "SimulationTruth",
    "load_truth",
    "marginal_alpha_logpdf",
    "mixture_prior_logpdf",
    "sample_mixture_prior",
    "save_truth",
    "simulate",
]
