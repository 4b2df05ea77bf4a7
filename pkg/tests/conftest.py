"""Pytest 配置和共享 fixtures。"""

from pathlib import Path

import numpy as np
import pytest

from src.core.ingest import center_columns
from src.schemas.datasets import IndividualDataset
from src.simulation.simulator import SimulationScenario, simulate
from src.utils.config import McemSettings, PriorConfig, reset_config


@pytest.fixture(autouse=True)
def isolated_output(monkeypatch, tmp_path):
    """每个测试使用独立的输出目录与全新的全局配置。"""
    monkeypatch.setenv("MREB_OUTPUT_DIR", str(tmp_path / "output"))
    monkeypatch.delenv("MREB_CONFIG", raising=False)
    reset_config()
    yield
    reset_config()


@pytest.fixture
def prior():
    """默认先验超参数。"""
    return PriorConfig()


@pytest.fixture
def fast_settings():
    """测试用的小规模 MCEM 设置。"""
    return McemSettings(mc_samples=60, burn_in=20, max_iters=25, seed=7, average_window=3)


@pytest.fixture
def small_scenario():
    """n=200、J=5 的模拟场景。"""
    return SimulationScenario(n=200, J=5, beta=0.2, mu_alpha=0.2, p0=0.4, seed=11)


@pytest.fixture
def small_dataset(small_scenario):
    """小规模模拟数据及真值。"""
    return simulate(small_scenario)


@pytest.fixture
def orthogonal_dataset():
    """ZᵀZ = nI 的中心化数据集（Z = √n·Q，Q 来自中心化随机矩阵的 QR）。"""
    rng = np.random.default_rng(2024)
    n, J = 400, 6
    raw = rng.standard_normal((n, J))
    raw -= raw.mean(axis=0)
    q, _ = np.linalg.qr(raw)
    Z = np.sqrt(n) * q
    gamma = rng.uniform(0.1, 0.3, size=J)
    alpha = np.where(rng.random(J) < 0.5, rng.uniform(0.0, 0.4, size=J), 0.0)
    v = rng.standard_normal(n)
    eps = 0.2 * v + rng.standard_normal(n)
    D = Z @ gamma + v
    Y = 0.2 * D + Z @ alpha + eps
    return center_columns(IndividualDataset(Z=Z, D=D, Y=Y))


@pytest.fixture
def write_csv(tmp_path):
    """把文本写入临时 CSV 并返回路径。"""

    def _write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
