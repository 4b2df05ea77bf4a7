"""Gibbs 抽样模块。

E 步链的精确条件抽样器，单高斯与 spike-and-slab 两种层级共用一套扫描：
α → ξ → τ² → σ²_η。单高斯模式下 ξ 恒为全 1 且不更新。
链状态单一所有者，顺序推进；独立链可在不同线程运行。
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import expit
from scipy.stats import norm

from src.core.ingest import write_frame
from src.error_types import NumericalError
from src.estimators.moments import ModelMoments
from src.rng import SeededGenerator, draw_bernoulli, draw_gamma, draw_mvn_chol
from src.utils.config import PriorConfig

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-12


@dataclass(frozen=True)
class PosteriorSample:
    """一次 Gibbs 抽样 (α, ξ, τ², σ²_η)。"""

    alpha: np.ndarray
    xi: np.ndarray
    tau2: float
    sigma2_eta: float

    def __post_init__(self) -> None:
        if not self.tau2 > 0:
            raise ValueError(f"tau2 must be positive, got {self.tau2}")
        if not self.sigma2_eta > 0:
            raise ValueError(f"sigma2_eta must be positive, got {self.sigma2_eta}")
        xi = np.asarray(self.xi)
        if np.any((xi != 0) & (xi != 1)):
            raise ValueError("xi entries must be 0 or 1")


@dataclass
class ChainState:
    """链状态：当前样本、生成器与已完成的扫描次数。"""

    current: PosteriorSample
    generator: SeededGenerator
    step_count: int = 0

    @property
    def rng_state(self) -> dict[str, Any]:
        return self.generator.state


def initial_state(
    moments: ModelMoments,
    prior: PriorConfig,
    generator: SeededGenerator,
    mixture: bool,
    xi_init: Literal["slab", "prior"] = "slab",
) -> ChainState:
    """t = 1 的初始链状态：α = 0，τ² = ν₂/ν₁，σ²_η 取 Y 的样本方差。

    xi_init="prior" 时 ξ ~ Ber(p̂₀⁽⁰⁾)，否则全 1。
    """
    J = moments.J
    if mixture and xi_init == "prior":
        xi = np.asarray(draw_bernoulli(generator, np.full(J, prior.p0_init)), dtype=np.int8)
    else:
        xi = np.ones(J, dtype=np.int8)
    if moments.fixed_sigma2 is not None:
        sigma2 = moments.fixed_sigma2
    else:
        variance = moments.outcome_variance()
        sigma2 = variance if variance is not None and variance > 0 else 1.0
    sample = PosteriorSample(alpha=np.zeros(J), xi=xi, tau2=prior.nu2 / prior.nu1, sigma2_eta=sigma2)
    return ChainState(current=sample, generator=generator, step_count=0)


def cholesky_with_jitter(matrix: np.ndarray) -> np.ndarray:
    """下三角 Cholesky 因子；失败时加 1e-12 × trace/J 抖动重试一次。"""
    sym = 0.5 * (matrix + matrix.T)
    try:
        return linalg.cholesky(sym, lower=True)
    except linalg.LinAlgError:
        jitter = JITTER_SCALE * float(np.trace(sym)) / sym.shape[0]
        logger.debug("gibbs.cholesky retry jitter=%.3g", jitter)
        try:
            return linalg.cholesky(sym + jitter * np.eye(sym.shape[0]), lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"Cholesky failure of conditional covariance: {exc}") from exc


def alpha_conditional(
    moments: ModelMoments,
    beta: float,
    prior_mean: np.ndarray,
    prior_var: np.ndarray,
    sigma2_eta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """α 的全条件分布 N(θ̲, Σ̲)。

    Σ̲ = (ZᵀZ/σ² + Γ⁻¹)⁻¹，θ̲ = Σ̲(Zᵀ(Y − D̂β)/σ² + Γ⁻¹m)，Γ 对角。

    Returns:
        (均值, 协方差)
    """
    precision_diag = 1.0 / np.asarray(prior_var, dtype=float)
    precision = moments.ztz / sigma2_eta + np.diag(precision_diag)
    linear = (moments.zty - beta * moments.ztd_hat) / sigma2_eta + precision_diag * prior_mean
    factor = cholesky_with_jitter(precision)
    covariance = linalg.cho_solve((factor, True), np.eye(moments.J))
    covariance = 0.5 * (covariance + covariance.T)
    mean = linalg.cho_solve((factor, True), linear)
    return mean, covariance


def slab_probability(alpha: np.ndarray, mu_alpha: float, tau2: float, nu0: float, p0: float) -> np.ndarray:
    """p̲ⱼ = p₀φ(αⱼ|μ_α, τ²) / [p₀φ(αⱼ|μ_α, τ²) + (1−p₀)φ(αⱼ|0, ν₀τ²)]，对数空间计算。"""
    if p0 <= 0.0:
        return np.zeros_like(alpha, dtype=float)
    if p0 >= 1.0:
        return np.ones_like(alpha, dtype=float)
    log_slab = np.log(p0) + norm.logpdf(alpha, loc=mu_alpha, scale=np.sqrt(tau2))
    log_spike = np.log1p(-p0) + norm.logpdf(alpha, loc=0.0, scale=np.sqrt(nu0 * tau2))
    return expit(log_slab - log_spike)


def tau2_conditional(
    alpha: np.ndarray, xi: np.ndarray, mu_alpha: float, prior: PriorConfig, mixture: bool
) -> tuple[float, float]:
    """τ⁻² 的全条件 Gamma(形状, 速率)。"""
    if mixture:
        weights = (1.0 - prior.nu0) * xi + prior.nu0
        deviation = np.sum((alpha - mu_alpha * xi) ** 2 / weights)
    else:
        deviation = np.sum((alpha - mu_alpha) ** 2)
    return prior.nu1 + alpha.shape[0] / 2.0, prior.nu2 + 0.5 * float(deviation)


def sigma2_conditional(
    moments: ModelMoments, beta: float, alpha: np.ndarray, prior: PriorConfig
) -> tuple[float, float]:
    """σ⁻²_η 的全条件 Gamma(形状, 速率)。"""
    if moments.n is None:
        raise NumericalError("sigma2_eta update needs the sample size")
    return prior.nu3 + moments.n / 2.0, prior.nu4 + 0.5 * moments.residual_norm2(beta, alpha)


def _sweep(
    state: ChainState,
    moments: ModelMoments,
    beta: float,
    mu_alpha: float,
    p0: float,
    prior: PriorConfig,
    mixture: bool,
) -> ChainState:
    gen = state.generator
    current = state.current
    xi = np.asarray(current.xi, dtype=float) if mixture else np.ones(moments.J)
    tau2 = current.tau2
    sigma2 = current.sigma2_eta

    # α
    if mixture:
        prior_var = ((1.0 - prior.nu0) * xi + prior.nu0) * tau2
    else:
        prior_var = np.full(moments.J, tau2)
    mean, covariance = alpha_conditional(moments, beta, mu_alpha * xi, prior_var, sigma2)
    alpha = draw_mvn_chol(gen, mean, cholesky_with_jitter(covariance))

    # ξ
    if mixture:
        probs = slab_probability(alpha, mu_alpha, tau2, prior.nu0, p0)
        xi = np.asarray(draw_bernoulli(gen, probs), dtype=float)

    # τ²
    shape, rate = tau2_conditional(alpha, xi, mu_alpha, prior, mixture)
    tau2 = 1.0 / float(draw_gamma(gen, shape, rate))

    # σ²_η
    if moments.fixed_sigma2 is None:
        shape, rate = sigma2_conditional(moments, beta, alpha, prior)
        sigma2 = 1.0 / float(draw_gamma(gen, shape, rate))
    else:
        sigma2 = moments.fixed_sigma2

    if not (np.isfinite(tau2) and tau2 > 0 and np.isfinite(sigma2) and sigma2 > 0):
        raise NumericalError(f"variance draw left the positive reals: tau2={tau2}, sigma2_eta={sigma2}")
    sample = PosteriorSample(alpha=alpha, xi=xi.astype(np.int8), tau2=tau2, sigma2_eta=sigma2)
    return replace(state, current=sample, step_count=state.step_count + 1)


def gibbs_step_single(
    state: ChainState,
    moments: ModelMoments,
    beta: float,
    mu_alpha: float,
    prior: PriorConfig,
) -> ChainState:
    """单高斯层级的一次完整扫描：α → τ² → σ²_η。"""
    return _sweep(state, moments, beta, mu_alpha, 1.0, prior, mixture=False)


def gibbs_step_mixture(
    state: ChainState,
    moments: ModelMoments,
    beta: float,
    mu_alpha: float,
    p0: float,
    prior: PriorConfig,
) -> ChainState:
    """spike-and-slab 层级的一次完整扫描：α → ξ → τ² → σ²_η。"""
    if not 0.0 <= p0 <= 1.0:
        raise ValueError(f"p0 must lie in [0, 1], got {p0}")
    return _sweep(state, moments, beta, mu_alpha, p0, prior, mixture=True)


@dataclass
class ChainTraceRecorder:
    """链轨迹记录器，写出 CSV：iteration, step, alpha1..J, xi1..J, tau2, sigma2_eta。"""

    rows: list[list[float]] = field(default_factory=list)
    J: int | None = None

    def record(self, iteration: int, state: ChainState) -> None:
        sample = state.current
        if self.J is None:
            self.J = int(sample.alpha.shape[0])
        self.rows.append(
            [iteration, state.step_count, *sample.alpha.tolist(), *np.asarray(sample.xi).tolist(),
             sample.tau2, sample.sigma2_eta]
        )

    def header(self) -> list[str]:
        J = self.J or 0
        return (
            ["iteration", "step"]
            + [f"alpha{j}" for j in range(1, J + 1)]
            + [f"xi{j}" for j in range(1, J + 1)]
            + ["tau2", "sigma2_eta"]
        )

    def write(self, path: str | Path) -> Path:
        frame = pd.DataFrame(self.rows, columns=self.header())
        frame[["iteration", "step"]] = frame[["iteration", "step"]].astype(int)
        out = write_frame(frame, path)
        logger.info("gibbs.trace written path=%s rows=%s", out, len(self.rows))
        return out


__all__ = [
    "ChainState",
    "ChainTraceRecorder",
    "PosteriorSample",
    "alpha_conditional",
    "cholesky_with_jitter",
    "gibbs_step_mixture",
    "gibbs_step_single",
    "initial_state",
    "sigma2_conditional",
    "slab_probability",
    "tau2_conditional",
]
