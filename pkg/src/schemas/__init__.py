"""数据模式模块。"""

from src.schemas.datasets import IndividualDataset, SummaryDataset

__all__ = ["IndividualDataset", "SummaryDataset"]
