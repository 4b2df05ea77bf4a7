"""估计量模块。"""

from src.estimators.closed_form import (
    FirstStageFit,
    first_stage,
    ridge_mode_mixture,
    ridge_mode_single,
    tsls,
)
from src.estimators.diagnostics import DiagnosticsReport, diagnostics, realized_eta
from src.estimators.gibbs import ChainState, ChainTraceRecorder, PosteriorSample
from src.estimators.mcem import EstimateResult, fit_mr_eb, fit_single_gaussian, fit_summary
from src.estimators.moments import ModelMoments, summarize_individual
from src.schemas.datasets import IndividualDataset
from src.utils.config import McemSettings, PriorConfig

# 模拟网格与命令行可选的估计量
ESTIMATORS = ("tsls", "eb-gaussian", "mr-eb")


def run_estimator(
    name: str,
    data: IndividualDataset,
    prior: PriorConfig,
    settings: McemSettings,
    recorder: ChainTraceRecorder | None = None,
) -> EstimateResult:
    """按名称运行个体数据估计量。"""
    if name == "tsls":
        fit = first_stage(data)
        return EstimateResult(estimator="tsls", beta_hat=tsls(data, fit))
    if name == "eb-gaussian":
        return fit_single_gaussian(data, prior, settings, recorder)
    if name == "mr-eb":
        return fit_mr_eb(data, prior, settings, recorder)
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


__all__ = [
    "ESTIMATORS",
    "ChainState",
    "ChainTraceRecorder",
    "DiagnosticsReport",
    "EstimateResult",
    "FirstStageFit",
    "ModelMoments",
    "PosteriorSample",
    "diagnostics",
    "first_stage",
    "fit_mr_eb",
    "fit_single_gaussian",
    "fit_summary",
    "realized_eta",
    "ridge_mode_mixture",
    "ridge_mode_single",
    "run_estimator",
    "summarize_individual",
    "tsls",
]
