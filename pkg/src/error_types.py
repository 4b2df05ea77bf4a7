"""Shared error taxonomy for estimation, simulation and CLI paths."""

from enum import Enum


class ErrorType(str, Enum):
    """Canonical error types used across loader/estimator/grid/cli layers."""

    USAGE = "USAGE"
    DATA = "DATA"
    NUMERICAL = "NUMERICAL"
    REPLICATE_FAILURE = "REPLICATE_FAILURE"


# CLI 退出码
EXIT_CODES: dict[ErrorType, int] = {
    ErrorType.USAGE: 2,
    ErrorType.DATA: 3,
    ErrorType.NUMERICAL: 4,
}


class MrebError(Exception):
    """所有领域异常的基类。"""

    error_type: ErrorType = ErrorType.USAGE

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.error_type, 1)


class DataValidationError(MrebError, ValueError):
    """输入数据不合法（解析失败、维度不符、非有限值等）。"""

    error_type = ErrorType.DATA

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None) -> None:
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class NumericalError(MrebError, ArithmeticError):
    """数值计算失败（秩亏、非正定、Cholesky 失败）。"""

    error_type = ErrorType.NUMERICAL
