"""模拟网格模块。

对场景 × 重复的笛卡尔网格运行各估计量，汇总每个 (场景, 估计量) 的 MSE 与
平均 c*/c**。重复之间互相独立，在线程池中并行；单个重复失败只计数，不中断网格。
"""

from __future__ import annotations

import concurrent.futures
import itertools
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from src.error_types import DataValidationError, ErrorType
from src.estimators import ESTIMATORS, run_estimator
from src.rng import derive_seed
from src.simulation.simulator import SimulationScenario, simulate
from src.utils.config import McemSettings, PriorConfig

logger = logging.getLogger(__name__)

# 网格规格文件里除场景字段外允许的键
_SPEC_CONTROL_KEYS = {"replicates", "estimators"}


@dataclass(frozen=True)
class GridSpec:
    """展开后的网格规格。"""

    scenarios: list[SimulationScenario]
    replicates: int | None = None
    estimators: tuple[str, ...] | None = None


@dataclass
class GridCellResult:
    """单个 (场景, 估计量) 的汇总。"""

    scenario: SimulationScenario
    estimator: str
    squared_errors: list[float] = field(default_factory=list)
    c_star: list[float] = field(default_factory=list)
    c_double_star: list[float] = field(default_factory=list)
    failed_replicates: int = 0

    @property
    def mse(self) -> float:
        return float(np.mean(self.squared_errors)) if self.squared_errors else float("nan")

    @staticmethod
    def _mean(values: list[float]) -> float:
        return float(np.mean(values)) if values else float("nan")

    def to_row(self) -> dict[str, Any]:
        row = dict(self.scenario.label())
        row.update(
            {
                "estimator": self.estimator,
                "replicates": len(self.squared_errors),
                "mse": self.mse,
                "mean_c_star": self._mean(self.c_star),
                "mean_c_double_star": self._mean(self.c_double_star),
                "failed_replicates": self.failed_replicates,
            }
        )
        return row


def expand_scenarios(base: dict[str, Any], seed: int = 0) -> list[SimulationScenario]:
    """对列表值做笛卡尔积展开；第 i 个场景的种子由 (seed, cell-i) 派生。"""
    swept = {k: v for k, v in base.items() if isinstance(v, list)}
    fixed = {k: v for k, v in base.items() if not isinstance(v, list)}
    keys = list(swept)
    scenarios = []
    for index, combo in enumerate(itertools.product(*(swept[k] for k in keys))):
        fields = dict(fixed)
        fields.update(zip(keys, combo))
        fields["seed"] = derive_seed(seed, f"cell-{index}")
        try:
            scenarios.append(SimulationScenario(**fields))
        except ValidationError as exc:
            raise DataValidationError(f"invalid grid scenario {fields}: {exc}") from exc
    return scenarios


def load_grid_spec(path: str | Path) -> GridSpec:
    """读取 YAML 网格规格：扁平映射，列表值参与扫描，标量共享。"""
    spec_path = Path(path)
    if not spec_path.exists():
        raise DataValidationError(f"file not found: {spec_path}")
    with open(spec_path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise DataValidationError(f"parse failure in grid spec {spec_path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataValidationError(f"grid spec must be a mapping: {spec_path}")

    seed = int(data.pop("seed", 0))
    replicates = data.pop("replicates", None)
    estimators = data.pop("estimators", None)
    if estimators is not None:
        estimators = tuple([estimators] if isinstance(estimators, str) else estimators)
        unknown = set(estimators) - set(ESTIMATORS)
        if unknown:
            raise DataValidationError(f"unknown estimator(s) in grid spec: {sorted(unknown)}")
    unknown_keys = set(data) - set(SimulationScenario.model_fields) - _SPEC_CONTROL_KEYS
    if unknown_keys:
        raise DataValidationError(f"unknown grid spec key(s): {sorted(unknown_keys)}")
    # 协方差矩阵与 γ 区间本身是序列，不参与扫描
    if "gamma_range" in data:
        data["gamma_range"] = tuple(data["gamma_range"])
    if "cov_v_eps" in data:
        data["cov_v_eps"] = tuple(tuple(row) for row in data["cov_v_eps"])

    spec = GridSpec(
        scenarios=expand_scenarios(data, seed=seed),
        replicates=int(replicates) if replicates is not None else None,
        estimators=estimators,
    )
    logger.info("grid.spec loaded path=%s cells=%s", spec_path, len(spec.scenarios))
    return spec


def paper_grid(n: int = 1000, J: int = 30, seed: int = 0) -> list[SimulationScenario]:
    """完整合成实验网格：β ∈ {0, 0.2}，μ_α ∈ {−0.2, 0, 0.2}，p₀ ∈ {0, 0.1, …, 1}，InSIDE 成立/违背。"""
    base: dict[str, Any] = {
        "n": n,
        "J": J,
        "beta": [0.0, 0.2],
        "mu_alpha": [-0.2, 0.0, 0.2],
        "p0": [round(0.1 * k, 1) for k in range(11)],
        "inside_ok": [True, False],
    }
    return expand_scenarios(base, seed=seed)


def _run_replicate(
    scenario: SimulationScenario,
    replicate: int,
    estimators: Sequence[str],
    prior: PriorConfig,
    settings: McemSettings,
) -> dict[str, dict[str, Any]]:
    replicate_seed = derive_seed(scenario.seed, f"replicate-{replicate}")
    data, truth = simulate(scenario.model_copy(update={"seed": replicate_seed}))
    rep_settings = settings.model_copy(update={"seed": derive_seed(replicate_seed, "mcem")})

    outcomes: dict[str, dict[str, Any]] = {}
    for name in estimators:
        try:
            result = run_estimator(name, data, prior, rep_settings)
        except Exception as exc:  # 单个估计失败不影响其余估计量
            logger.warning(
                "grid.replicate failed error_type=%s estimator=%s seed=%s error=%s",
                ErrorType.REPLICATE_FAILURE.value, name, replicate_seed, exc,
            )
            outcomes[name] = {"error": str(exc)}
            continue
        report = result.diagnostics
        outcomes[name] = {
            "squared_error": (result.beta_hat - truth.beta) ** 2,
            "c_star": report.c_star if report else None,
            "c_double_star": report.c_double_star if report else None,
        }
    return outcomes


def run_grid(
    scenarios: Iterable[SimulationScenario],
    replicates: int,
    estimators: Sequence[str],
    prior: PriorConfig,
    settings: McemSettings,
    workers: int | None = None,
) -> list[GridCellResult]:
    """运行网格，返回按 (场景, 估计量) 排列的汇总。

    Args:
        scenarios: 场景列表
        replicates: 每个场景的重复次数
        estimators: 估计量名称
        prior: 先验超参数
        settings: MCEM 设置（每个重复的种子另行派生）
        workers: 线程数，None 表示逻辑核数
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise DataValidationError("grid is empty")
    if replicates < 1:
        raise DataValidationError(f"replicates must be at least 1, got {replicates}")
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise DataValidationError(f"unknown estimator(s): {sorted(unknown)}")

    cells = {
        (i, name): GridCellResult(scenario=scenario, estimator=name)
        for i, scenario in enumerate(scenarios)
        for name in estimators
    }
    max_workers = workers or os.cpu_count() or 1
    logger.info(
        "grid.start cells=%s replicates=%s estimators=%s workers=%s",
        len(scenarios), replicates, ",".join(estimators), max_workers,
    )

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_task = {
            executor.submit(_run_replicate, scenario, r, estimators, prior, settings): (i, r)
            for i, scenario in enumerate(scenarios)
            for r in range(replicates)
        }
        # 先收集再按 (cell, replicate) 顺序合并，保证浮点求和顺序与完成顺序无关
        collected: dict[tuple[int, int], dict[str, dict[str, Any]] | None] = {}
        for future in concurrent.futures.as_completed(future_to_task):
            task = future_to_task[future]
            try:
                collected[task] = future.result()
            except Exception as exc:
                logger.warning(
                    "grid.replicate failed error_type=%s cell=%s replicate=%s error=%s",
                    ErrorType.REPLICATE_FAILURE.value, task[0], task[1], exc,
                )
                collected[task] = None

    for (i, _r), outcomes in sorted(collected.items()):
        for name in estimators:
            cell = cells[(i, name)]
            outcome = outcomes.get(name) if outcomes is not None else None
            if outcome is None or "error" in outcome:
                cell.failed_replicates += 1
                continue
            cell.squared_errors.append(outcome["squared_error"])
            if outcome["c_star"] is not None:
                cell.c_star.append(outcome["c_star"])
            if outcome["c_double_star"] is not None:
                cell.c_double_star.append(outcome["c_double_star"])

    results = [cells[(i, name)] for i in range(len(scenarios)) for name in estimators]
    failed = sum(c.failed_replicates for c in results)
    logger.info("grid.done cells=%s failed_replicates=%s", len(results), failed)
    return results


def results_frame(results: Sequence[GridCellResult]) -> pd.DataFrame:
    """MSE 表：场景列、estimator、replicates、mse、mean_c_star、mean_c_double_star、failed_replicates。"""
    return pd.DataFrame([cell.to_row() for cell in results])


__all__ = [
    "GridCellResult",
    "GridSpec",
    "expand_scenarios",
    "load_grid_spec",
    "paper_grid",
    "results_frame",
    "run_grid",
]
