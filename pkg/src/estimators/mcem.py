"""Monte Carlo EM 驱动模块。

E 步用 Gibbs 链抽取 (α, ξ, τ², σ²_η) 的后验样本，M 步对抽样平均的 Q 函数
取闭式最大点，交替直到 (β̂, μ̂_α[, p̂₀]) 的相对变化低于 tol。
收敛后再跑 average_window 轮并取平均作为最终估计，以压低 Monte Carlo 抖动。
"""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import linalg

from src.error_types import NumericalError
from src.estimators.closed_form import first_stage
from src.estimators.diagnostics import DiagnosticsReport, diagnostics_from_moments
from src.estimators.gibbs import (
    ChainState,
    ChainTraceRecorder,
    gibbs_step_mixture,
    gibbs_step_single,
    initial_state,
)
from src.estimators.moments import ModelMoments
from src.rng import SeededGenerator
from src.schemas.datasets import IndividualDataset, SummaryDataset
from src.utils.config import McemSettings, PriorConfig

logger = logging.getLogger(__name__)

# 相对变化分母中的偏移量
RELATIVE_OFFSET = 0.01


@dataclass(frozen=True)
class PosteriorDraws:
    """一次 E 步保留下来的 m 个样本。"""

    alpha: np.ndarray  # (m, J)
    xi: np.ndarray  # (m, J)
    tau2: np.ndarray  # (m,)
    sigma2_eta: np.ndarray  # (m,)

    @property
    def m(self) -> int:
        return int(self.tau2.shape[0])


@dataclass(frozen=True)
class IterationRecord:
    """单次 EM 迭代后的参数。"""

    beta: float
    mu_alpha: float
    p0: float | None = None


@dataclass
class EstimateResult:
    """MCEM（或闭式）估计结果。"""

    estimator: str
    beta_hat: float
    mu_alpha_hat: float | None = None
    p0_hat: float | None = None
    iters: int = 0
    converged: bool = True
    trace: list[IterationRecord] = field(default_factory=list)
    diagnostics: DiagnosticsReport | None = None
    tau2_mean: float | None = None
    sigma2_eta_mean: float | None = None

    def to_dict(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "estimator": self.estimator,
            "beta_hat": self.beta_hat,
            "mu_alpha_hat": self.mu_alpha_hat,
            "p0_hat": self.p0_hat,
            "iters": self.iters,
            "converged": self.converged,
            "tau2_mean": self.tau2_mean,
            "sigma2_eta_mean": self.sigma2_eta_mean,
        }
        if self.diagnostics is not None:
            row.update(self.diagnostics.as_row())
        return row


def run_e_step(
    state: ChainState,
    moments: ModelMoments,
    beta: float,
    mu_alpha: float,
    p0: float,
    prior: PriorConfig,
    settings: McemSettings,
    mixture: bool,
    iteration: int = 0,
    recorder: ChainTraceRecorder | None = None,
) -> tuple[ChainState, PosteriorDraws]:
    """从给定状态热启动，丢弃 burn_in 次扫描后保留 mc_samples 个样本。"""
    m, J = settings.mc_samples, moments.J
    alpha = np.empty((m, J))
    xi = np.empty((m, J))
    tau2 = np.empty(m)
    sigma2 = np.empty(m)
    for step in range(settings.burn_in + m):
        if mixture:
            state = gibbs_step_mixture(state, moments, beta, mu_alpha, p0, prior)
        else:
            state = gibbs_step_single(state, moments, beta, mu_alpha, prior)
        if recorder is not None:
            recorder.record(iteration, state)
        if step < settings.burn_in:
            continue
        i = step - settings.burn_in
        alpha[i] = state.current.alpha
        xi[i] = state.current.xi
        tau2[i] = state.current.tau2
        sigma2[i] = state.current.sigma2_eta
    return state, PosteriorDraws(alpha=alpha, xi=xi, tau2=tau2, sigma2_eta=sigma2)


def clamp_p0(p0: float, m: int, J: int) -> float:
    """把 p̂₀ 限制在 [1/(mJ+1), 1 − 1/(mJ+1)]。"""
    margin = 1.0 / (m * J + 1)
    return float(min(max(p0, margin), 1.0 - margin))


def m_step(
    moments: ModelMoments,
    draws: PosteriorDraws,
    mixture: bool,
    previous_mu: float,
) -> tuple[float, float, float | None]:
    """抽样 Q 函数的闭式最大点 (β̂, μ̂_α, p̂₀)。

    β̂ 按各样本 σ⁻²_η 加权；σ²_η 固定时即为简单平均。
    所有 ξ 为 0 时 Q 对 μ_α 平坦，保持上一轮的 μ̂_α。
    """
    weights = 1.0 / draws.sigma2_eta
    projected = moments.dhat_y - draws.alpha @ moments.ztd_hat
    beta = float(np.sum(weights * projected) / (moments.dhat_norm2 * np.sum(weights)))

    xi = draws.xi if mixture else np.ones_like(draws.alpha)
    inv_tau2 = 1.0 / draws.tau2
    denominator = float(np.sum(xi.sum(axis=1) * inv_tau2))
    if denominator > 0:
        mu_alpha = float(np.sum((draws.alpha * xi).sum(axis=1) * inv_tau2) / denominator)
    else:
        logger.debug("mcem.m_step all xi zero, holding mu_alpha=%.6g", previous_mu)
        mu_alpha = previous_mu

    p0 = float(np.mean(draws.xi)) if mixture else None
    return beta, mu_alpha, p0


def sampled_q_function(
    moments: ModelMoments,
    draws: PosteriorDraws,
    beta: float,
    mu_alpha: float,
    p0: float | None,
    prior: PriorConfig,
    mixture: bool,
) -> float:
    """抽样平均的 Q 函数，只保留依赖 (β, μ_α, p₀) 的项。"""
    residual = beta * beta * moments.dhat_norm2 - 2.0 * beta * (moments.dhat_y - draws.alpha @ moments.ztd_hat)
    value = -0.5 * residual / draws.sigma2_eta
    if mixture:
        xi = draws.xi
        scale = ((1.0 - prior.nu0) * xi + prior.nu0) * draws.tau2[:, None]
        value = value - 0.5 * np.sum((draws.alpha - mu_alpha * xi) ** 2 / scale, axis=1)
        if p0 is None or not 0.0 < p0 < 1.0:
            raise ValueError(f"p0 must lie in (0, 1) for the mixture Q-function, got {p0}")
        value = value + np.sum(xi * np.log(p0) + (1.0 - xi) * np.log1p(-p0), axis=1)
    else:
        value = value - 0.5 * np.sum((draws.alpha - mu_alpha) ** 2, axis=1) / draws.tau2
    return float(np.mean(value))


def _relative_change(current: IterationRecord, previous: IterationRecord) -> float:
    pairs = [(current.beta, previous.beta), (current.mu_alpha, previous.mu_alpha)]
    if current.p0 is not None and previous.p0 is not None:
        pairs.append((current.p0, previous.p0))
    return max(abs(now - before) / (abs(before) + RELATIVE_OFFSET) for now, before in pairs)


def _prior_scale(draws: PosteriorDraws, mixture: bool, nu0: float) -> np.ndarray:
    """αⱼ 先验方差相对 τ² 的倍数；混合模式按众数 ξ 取 1 或 ν₀。"""
    if not mixture:
        return np.ones(draws.alpha.shape[1])
    xi_mode = (np.mean(draws.xi, axis=0) >= 0.5).astype(float)
    return (1.0 - nu0) * xi_mode + nu0


def information_ratio(moments: ModelMoments, tau2: float, sigma2_eta: float, prior_scale: np.ndarray) -> float:
    """β 的观测信息与完全数据信息之比，即 EM 在 β 方向上每轮的收缩率。

    积掉 α 后 Var(Y) = σ²I + Z diag(τ²s) Zᵀ，两种信息之比为
    1 − (ZᵀD̂)ᵀ(ZᵀZ + Λ)⁻¹(ZᵀD̂) / D̂ᵀD̂，Λ = diag(σ²/(τ²sⱼ))。
    比值趋于 0 时 α 吸收全部结果信号，任何 β 都近似是 EM 不动点。
    """
    penalty = sigma2_eta / (tau2 * np.asarray(prior_scale, dtype=float))
    system = moments.ztz + np.diag(penalty)
    absorbed = float(moments.ztd_hat @ linalg.solve(system, moments.ztd_hat, assume_a="pos"))
    return float(max(1.0 - absorbed / moments.dhat_norm2, 0.0))


def run_mcem(
    moments: ModelMoments,
    prior: PriorConfig,
    settings: McemSettings,
    mixture: bool,
    estimator: str,
    recorder: ChainTraceRecorder | None = None,
) -> EstimateResult:
    """在样本矩上运行 MCEM；个体数据与汇总统计共用。"""
    generator = SeededGenerator(settings.seed)
    state = initial_state(moments, prior, generator, mixture, settings.xi_init)
    previous = IterationRecord(
        beta=prior.beta_init,
        mu_alpha=prior.mu_alpha_init,
        p0=prior.p0_init if mixture else None,
    )
    trace: list[IterationRecord] = []
    averaged: list[IterationRecord] = []
    converged = False
    stalled_ratio: float | None = None
    draws: PosteriorDraws | None = None

    logger.info(
        "mcem.start estimator=%s J=%s m=%s burn_in=%s max_iters=%s seed=%s",
        estimator, moments.J, settings.mc_samples, settings.burn_in, settings.max_iters, settings.seed,
    )
    for iteration in range(1, settings.max_iters + 1):
        # 混合模式的 E 步需要 (0,1) 内的 p₀
        p0_now = previous.p0 if previous.p0 is not None else 1.0
        state, draws = run_e_step(
            state, moments, previous.beta, previous.mu_alpha, p0_now, prior, settings, mixture, iteration, recorder
        )
        beta, mu_alpha, p0 = m_step(moments, draws, mixture, previous.mu_alpha)
        if p0 is not None:
            p0 = clamp_p0(p0, settings.mc_samples, moments.J)
        record = IterationRecord(beta=beta, mu_alpha=mu_alpha, p0=p0)
        if not all(np.isfinite(v) for v in (beta, mu_alpha, p0 if p0 is not None else 0.0)):
            raise NumericalError(f"non-finite M-step output at iteration {iteration}: {record}")
        trace.append(record)
        change = _relative_change(record, previous)
        previous = record
        logger.debug(
            "mcem.iteration estimator=%s t=%s beta=%.6g mu_alpha=%.6g p0=%s change=%.3g",
            estimator, iteration, beta, mu_alpha, p0, change,
        )

        if converged:
            averaged.append(record)
            if len(averaged) >= settings.average_window:
                break
        elif change < settings.tol:
            # 每轮收缩率低于 tol 时，相对变化小并不说明到达不动点
            ratio = information_ratio(
                moments,
                float(np.mean(draws.tau2)),
                float(np.mean(draws.sigma2_eta)),
                _prior_scale(draws, mixture, prior.nu0),
            )
            if ratio < settings.tol:
                stalled_ratio = ratio
                break
            converged = True
            logger.info("mcem.converged estimator=%s iteration=%s", estimator, iteration)

    if not averaged:
        averaged = trace[-min(settings.average_window, len(trace)):]
    if stalled_ratio is not None:
        logger.warning(
            "mcem.stalled estimator=%s iters=%s info_ratio=%.3g beta=%.6g", estimator, len(trace), stalled_ratio,
            trace[-1].beta,
        )
    elif not converged:
        logger.warning("mcem.not_converged estimator=%s iters=%s", estimator, len(trace))

    beta_hat = float(np.mean([r.beta for r in averaged]))
    mu_hat = float(np.mean([r.mu_alpha for r in averaged]))
    p0_hat = float(np.mean([r.p0 for r in averaged if r.p0 is not None])) if mixture else None

    assert draws is not None
    tau2_mean = float(np.mean(draws.tau2))
    sigma2_mean = float(np.mean(draws.sigma2_eta))
    xi_mode = (np.mean(draws.xi, axis=0) >= 0.5).astype(float)
    try:
        report = diagnostics_from_moments(
            moments,
            tau2_mean,
            sigma2_mean,
            mode="mixture" if mixture else "single",
            xi=xi_mode if mixture else None,
            nu0=prior.nu0 if mixture else None,
            mu_alpha=mu_hat,
        )
    except NumericalError as exc:
        logger.warning("mcem.diagnostics failed estimator=%s error=%s", estimator, exc)
        report = None

    logger.info(
        "mcem.done estimator=%s beta_hat=%.6g iters=%s converged=%s", estimator, beta_hat, len(trace), converged
    )
    return EstimateResult(
        estimator=estimator,
        beta_hat=beta_hat,
        mu_alpha_hat=mu_hat,
        p0_hat=p0_hat,
        iters=len(trace),
        converged=converged,
        trace=trace,
        diagnostics=report,
        tau2_mean=tau2_mean,
        sigma2_eta_mean=sigma2_mean,
    )


def _individual_moments(data: IndividualDataset, settings: McemSettings) -> ModelMoments:
    fit = first_stage(data)
    return ModelMoments.from_individual(data, fit).with_fixed_sigma2(settings.fixed_sigma2_eta)


def fit_single_gaussian(
    data: IndividualDataset,
    prior: PriorConfig,
    settings: McemSettings,
    recorder: ChainTraceRecorder | None = None,
) -> EstimateResult:
    """单高斯先验的经验贝叶斯估计 β̂^{μ̂_α}。"""
    return run_mcem(_individual_moments(data, settings), prior, settings, False, "eb-gaussian", recorder)


def fit_mr_eb(
    data: IndividualDataset,
    prior: PriorConfig,
    settings: McemSettings,
    recorder: ChainTraceRecorder | None = None,
) -> EstimateResult:
    """spike-and-slab 先验的 MR-EB 估计。"""
    return run_mcem(_individual_moments(data, settings), prior, settings, True, "mr-eb", recorder)


def fit_summary(
    summary: SummaryDataset,
    prior: PriorConfig,
    settings: McemSettings,
    recorder: ChainTraceRecorder | None = None,
) -> EstimateResult:
    """汇总统计模式的 MR-EB：σ²_η 已吸收进统计量，固定为 1 不再更新。"""
    if settings.fixed_sigma2_eta is not None:
        logger.warning("mcem.summary ignoring fixed_sigma2_eta=%s", settings.fixed_sigma2_eta)
    moments = ModelMoments.from_summary(summary)
    return run_mcem(moments, prior, settings, True, "mr-eb-summary", recorder)


__all__ = [
    "EstimateResult",
    "IterationRecord",
    "PosteriorDraws",
    "clamp_p0",
    "fit_mr_eb",
    "fit_single_gaussian",
    "fit_summary",
    "information_ratio",
    "m_step",
    "run_e_step",
    "run_mcem",
    "sampled_q_function",
]
