"""数据读写模块。

负责个体水平 CSV 与汇总统计 CSV 的读取、校验、中心化与 17 位有效数字输出。
所有下游公式都假定数据已经中心化，中心化在加载时完成。
"""

import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from src.error_types import DataValidationError
from src.schemas.datasets import IndividualDataset, SummaryDataset

logger = logging.getLogger(__name__)

# 列均值绝对值不超过该阈值视为已中心化（保证幂等）
CENTERING_ATOL = 1e-10
FLOAT_FORMAT = "%.17g"
SUMMARY_COLUMNS = ["gamma2", "omega", "sigma2_omega"]
_NONFINITE_TOKENS = {"", "nan", "na", "n/a", "inf", "+inf", "-inf", "infinity", "-infinity", "+infinity"}


def _center(values: np.ndarray) -> np.ndarray:
    means = values.mean(axis=0)
    if values.ndim == 1:
        return values if abs(means) <= CENTERING_ATOL else values - means
    shift = np.where(np.abs(means) <= CENTERING_ATOL, 0.0, means)
    return values - shift


def center_columns(data: IndividualDataset) -> IndividualDataset:
    """对 Z 的每一列以及 D、Y 做中心化。

    已满足均值阈值的列原样保留，因此操作幂等。
    """
    return IndividualDataset(
        Z=_center(np.asarray(data.Z)),
        D=_center(np.asarray(data.D)),
        Y=_center(np.asarray(data.Y)),
        centered=True,
    )


def _read_table(path: str | Path) -> pd.DataFrame:
    file_path = Path(path)
    if not file_path.exists():
        raise DataValidationError(f"file not found: {file_path}")
    try:
        return pd.read_csv(
            file_path,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except pd.errors.ParserError as exc:
        raise DataValidationError(f"parse failure in {file_path}: {exc}") from exc


def _parse_column(raw: pd.Series, column: str) -> np.ndarray:
    """逐格解析十进制浮点数，报告首个出错位置。

    使用 Python float 保证 17 位有效数字输入精确往返。
    """
    values = np.empty(len(raw), dtype=float)
    for idx, cell in enumerate(raw.tolist()):
        row = idx + 1
        if cell is None or (isinstance(cell, float) and math.isnan(cell)):
            raise DataValidationError("non-finite entry (missing value)", row=row, column=column)
        text = str(cell).strip()
        if text.lower() in _NONFINITE_TOKENS:
            raise DataValidationError(f"non-finite entry {text!r}", row=row, column=column)
        try:
            number = float(text)
        except ValueError as exc:
            raise DataValidationError(f"parse failure: {text!r} is not a number", row=row, column=column) from exc
        if not math.isfinite(number):
            raise DataValidationError(f"non-finite entry {text!r}", row=row, column=column)
        values[idx] = number
    return values


def load_individual(path: str | Path) -> IndividualDataset:
    """读取个体水平 CSV（表头 z1,...,zJ,d,y），校验并中心化。

    Raises:
        DataValidationError: 解析失败、维度不符、非有限值或 n ≤ J
    """
    frame = _read_table(path)
    columns = [str(c).strip() for c in frame.columns]
    if len(columns) < 3:
        raise DataValidationError(
            f"dimension mismatch: expected header z1,...,zJ,d,y, got {','.join(columns) or '<empty>'}"
        )
    J = len(columns) - 2
    expected = [f"z{j}" for j in range(1, J + 1)] + ["d", "y"]
    if [c.lower() for c in columns] != expected:
        raise DataValidationError(
            f"parse failure: header must be {','.join(expected)}, got {','.join(columns)}"
        )
    if len(frame) == 0:
        raise DataValidationError(f"n ≤ J: n=0, J={J}")

    parsed = {name: _parse_column(frame.iloc[:, idx], name) for idx, name in enumerate(expected)}
    Z = np.column_stack([parsed[f"z{j}"] for j in range(1, J + 1)])
    raw = IndividualDataset(Z=Z, D=parsed["d"], Y=parsed["y"])
    data = center_columns(raw)
    logger.info("ingest.individual loaded path=%s n=%s J=%s", path, data.n, data.J)
    return data


def load_summary(path: str | Path) -> SummaryDataset:
    """读取汇总统计 CSV（表头 gamma2,omega,sigma2_omega）。

    Raises:
        DataValidationError: 解析失败、无变异位点或方差非正
    """
    frame = _read_table(path)
    if frame.shape[1] == 0 and len(frame) == 0:
        raise DataValidationError("no variants: file is empty")
    columns = [str(c).strip().lower() for c in frame.columns]
    if columns != SUMMARY_COLUMNS:
        raise DataValidationError(
            f"parse failure: header must be {','.join(SUMMARY_COLUMNS)}, got {','.join(columns)}"
        )
    if len(frame) == 0:
        raise DataValidationError("no variants: header present but no rows")

    parsed = {name: _parse_column(frame.iloc[:, idx], name) for idx, name in enumerate(SUMMARY_COLUMNS)}
    summary = SummaryDataset(
        gamma2=parsed["gamma2"],
        omega=parsed["omega"],
        sigma2_omega=parsed["sigma2_omega"],
    )
    logger.info("ingest.summary loaded path=%s J=%s", path, summary.J)
    return summary


def write_frame(frame: pd.DataFrame, path: str | Path) -> Path:
    """以 17 位有效数字写出 CSV。"""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return out


def save_individual(data: IndividualDataset, path: str | Path) -> Path:
    """写出个体水平 CSV，可被 load_individual 原样读回。"""
    frame = pd.DataFrame(np.asarray(data.Z), columns=[f"z{j}" for j in range(1, data.J + 1)])
    frame["d"] = np.asarray(data.D)
    frame["y"] = np.asarray(data.Y)
    return write_frame(frame, path)


def save_summary(summary: SummaryDataset, path: str | Path) -> Path:
    """写出汇总统计 CSV。"""
    frame = pd.DataFrame(
        {
            "gamma2": np.asarray(summary.gamma2),
            "omega": np.asarray(summary.omega),
            "sigma2_omega": np.asarray(summary.sigma2_omega),
        }
    )
    return write_frame(frame, path)


__all__ = [
    "CENTERING_ATOL",
    "center_columns",
    "load_individual",
    "load_summary",
    "save_individual",
    "save_summary",
    "write_frame",
]
