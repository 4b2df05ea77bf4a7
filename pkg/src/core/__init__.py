"""Core 模块初始化。"""

from src.core.ingest import (
    center_columns,
    load_individual,
    load_summary,
    save_individual,
    save_summary,
)

__all__ = [
    "center_columns",
    "load_individual",
    "load_summary",
    "save_individual",
    "save_summary",
]
