"""配置加载模块。

从 YAML 文件和环境变量加载先验超参数、MCEM 设置与输出配置。
"""

import os
from pathlib import Path
from typing import Any, Literal

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.error_types import DataValidationError


# 加载 .env 文件
load_dotenv()

PROJECT_ROOT = Path(__file__).parent.parent.parent

OUTPUT_DIR_ENV = "MREB_OUTPUT_DIR"
CONFIG_PATH_ENV = "MREB_CONFIG"


class PriorConfig(BaseModel):
    """两层先验的超参数与初始值。

    nu1/nu2 为 τ⁻² 的 Gamma 形状/速率，nu3/nu4 为 σ⁻²_η 的 Gamma 形状/速率，
    nu0 仅用于混合先验的 spike 方差比。
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    nu0: float = Field(default=0.001, gt=0.0, lt=1.0)
    nu1: float = Field(default=2.0, gt=0.0)
    nu2: float = Field(default=0.4, gt=0.0)
    nu3: float = Field(default=0.0001, gt=0.0)
    nu4: float = Field(default=0.0001, gt=0.0)
    beta_init: float = 0.0
    mu_alpha_init: float = 0.0
    p0_init: float = Field(default=0.5, ge=0.0, le=1.0)


class McemSettings(BaseModel):
    """Monte Carlo EM 运行设置。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mc_samples: int = Field(default=500, ge=1)
    burn_in: int = Field(default=100, ge=0)
    max_iters: int = Field(default=200, ge=1)
    tol: float = Field(default=1e-3, gt=0.0)
    seed: int = Field(default=20240101, ge=0, lt=2**64)
    average_window: int = Field(default=10, ge=1)
    xi_init: Literal["slab", "prior"] = "slab"
    # 固定 σ²_η（不再抽样），None 表示正常更新
    fixed_sigma2_eta: float | None = Field(default=None, gt=0.0)


class GridConfig(BaseModel):
    """模拟网格配置。"""

    model_config = ConfigDict(extra="forbid")

    replicates: int = Field(default=20, ge=1)
    workers: int | None = Field(default=None, ge=1)  # None 表示逻辑核数


class OutputConfig(BaseModel):
    """输出配置。"""

    model_config = ConfigDict(extra="forbid")

    path: str = "output"


class Config(BaseModel):
    """主配置类。"""

    model_config = ConfigDict(extra="forbid")

    prior: PriorConfig = Field(default_factory=PriorConfig)
    mcem: McemSettings = Field(default_factory=McemSettings)
    grid: GridConfig = Field(default_factory=GridConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    def with_overrides(
        self,
        prior: dict[str, Any] | None = None,
        mcem: dict[str, Any] | None = None,
        grid: dict[str, Any] | None = None,
    ) -> "Config":
        """返回合并了命令行覆盖值的新配置（重新校验）。"""
        data = self.model_dump()
        for section, updates in (("prior", prior), ("mcem", mcem), ("grid", grid)):
            if updates:
                data[section].update({k: v for k, v in updates.items() if v is not None})
        return Config(**data)


_SECTIONS: dict[str, type[BaseModel]] = {
    "prior": PriorConfig,
    "mcem": McemSettings,
    "grid": GridConfig,
    "output": OutputConfig,
}


def _route_flat_keys(data: dict[str, Any]) -> dict[str, Any]:
    """把扁平的 key: value 归入声明它的配置段。"""
    routed: dict[str, Any] = {name: {} for name in _SECTIONS}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise DataValidationError(f"config section '{key}' must be a mapping")
            routed[key].update(value)
            continue
        owners = [name for name, model in _SECTIONS.items() if key in model.model_fields]
        if not owners:
            raise DataValidationError(f"unknown config key '{key}'")
        routed[owners[0]][key] = value
    return routed


def get_env(key: str, default: str | None = None) -> str:
    """从环境变量获取配置值。

    Args:
        key: 环境变量名
        default: 默认值

    Returns:
        环境变量值

    Raises:
        ValueError: 环境变量不存在且未提供默认值
    """
    value = os.getenv(key, default)
    if value is None:
        raise ValueError(f"Environment variable '{key}' not set and no default provided")
    return value


def load_config(config_path: str | Path | None = None) -> Config:
    """从 YAML 文件加载配置。

    Args:
        config_path: 配置文件路径，默认取 MREB_CONFIG 或项目根目录的 config.yaml

    Returns:
        配置对象

    Raises:
        FileNotFoundError: 显式指定的配置文件不存在
        DataValidationError: 配置格式错误
    """
    explicit = config_path is not None
    if config_path is None:
        config_path = os.getenv(CONFIG_PATH_ENV) or str(PROJECT_ROOT / "config.yaml")

    config_file = Path(config_path)
    if not config_file.exists():
        if explicit:
            raise FileNotFoundError(f"Config file not found: {config_path}")
        return Config()

    with open(config_file, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise DataValidationError(f"parse failure in config file {config_path}: {exc}") from exc

    if data is None:
        return Config()
    if not isinstance(data, dict):
        raise DataValidationError(f"config file must contain a mapping: {config_path}")

    try:
        return Config(**_route_flat_keys(data))
    except ValidationError as exc:
        raise DataValidationError(f"invalid config in {config_path}: {exc}") from exc


def default_output_dir(config: Config | None = None) -> Path:
    """解析默认输出目录：环境变量优先，其次配置文件。"""
    env_value = os.getenv(OUTPUT_DIR_ENV, "").strip()
    if env_value:
        return Path(env_value)
    return Path((config or get_config()).output.path)


# 全局配置实例（延迟加载）
_config: Config | None = None


def get_config() -> Config:
    """获取全局配置实例。"""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def reset_config() -> None:
    """重置全局配置（测试用）。"""
    global _config
    _config = None
