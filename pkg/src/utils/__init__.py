"""工具模块。"""

from src.utils.config import (
    Config,
    McemSettings,
    PriorConfig,
    get_config,
    get_env,
    load_config,
)

__all__ = ["Config", "McemSettings", "PriorConfig", "get_config", "get_env", "load_config"]
