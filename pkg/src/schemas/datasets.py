"""数据集模式模块。

定义个体水平数据 (Z, D, Y) 与汇总统计 (γ̃⁽²⁾, Ω̃, σ̃²_Ω) 两种输入。
两者构造后均不可变（数组只读），可在线程间共享。
"""

from dataclasses import dataclass, field

import numpy as np

from src.error_types import DataValidationError


def _readonly(values: np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array.setflags(write=False)
    return array


def _first_nonfinite(array: np.ndarray) -> tuple[int, int] | None:
    bad = np.argwhere(~np.isfinite(array))
    if bad.size == 0:
        return None
    if array.ndim == 1:
        return int(bad[0][0]), 0
    return int(bad[0][0]), int(bad[0][1])


@dataclass(frozen=True)
class IndividualDataset:
    """个体水平观测。

    Attributes:
        Z: 工具变量矩阵，n 行 × J 列
        D: 暴露向量，长度 n
        Y: 结局向量，长度 n
        centered: 是否已做列中心化
    """

    Z: np.ndarray
    D: np.ndarray
    Y: np.ndarray
    centered: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        Z = np.asarray(self.Z, dtype=float)
        D = np.asarray(self.D, dtype=float).reshape(-1)
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        if Z.ndim != 2:
            raise DataValidationError(f"dimension mismatch: Z must be a matrix, got ndim={Z.ndim}")
        n, J = Z.shape
        if D.shape[0] != n or Y.shape[0] != n:
            raise DataValidationError(
                f"dimension mismatch: Z has {n} rows, D has {D.shape[0]}, Y has {Y.shape[0]}"
            )
        for name, array in (("Z", Z), ("D", D), ("Y", Y)):
            location = _first_nonfinite(array)
            if location is not None:
                row, col = location
                column = f"z{col + 1}" if name == "Z" else name.lower()
                raise DataValidationError("non-finite entry", row=row + 1, column=column)
        if J < 1:
            raise DataValidationError("dimension mismatch: at least one instrument column is required")
        if n <= J:
            raise DataValidationError(f"n ≤ J: n={n}, J={J}; first stage needs n ≥ J + 1")

        object.__setattr__(self, "Z", _readonly(Z))
        object.__setattr__(self, "D", _readonly(D))
        object.__setattr__(self, "Y", _readonly(Y))

    @property
    def n(self) -> int:
        return int(self.Z.shape[0])

    @property
    def J(self) -> int:
        return int(self.Z.shape[1])


@dataclass(frozen=True)
class SummaryDataset:
    """逐变异位点的关联汇总统计。

    Attributes:
        gamma2: 暴露–变异关联估计 γ̃⁽²⁾（独立样本）
        omega: 结局–变异关联估计 Ω̃
        sigma2_omega: Ω̃ 各分量的估计方差
    """

    gamma2: np.ndarray
    omega: np.ndarray
    sigma2_omega: np.ndarray

    def __post_init__(self) -> None:
        gamma2 = np.asarray(self.gamma2, dtype=float).reshape(-1)
        omega = np.asarray(self.omega, dtype=float).reshape(-1)
        sigma2 = np.asarray(self.sigma2_omega, dtype=float).reshape(-1)
        J = gamma2.shape[0]
        if J < 1:
            raise DataValidationError("no variants")
        if omega.shape[0] != J or sigma2.shape[0] != J:
            raise DataValidationError(
                f"dimension mismatch: gamma2={J}, omega={omega.shape[0]}, sigma2_omega={sigma2.shape[0]}"
            )
        for name, array in (("gamma2", gamma2), ("omega", omega), ("sigma2_omega", sigma2)):
            location = _first_nonfinite(array)
            if location is not None:
                raise DataValidationError("non-finite entry", row=location[0] + 1, column=name)
        nonpositive = np.flatnonzero(sigma2 <= 0)
        if nonpositive.size:
            raise DataValidationError(
                f"nonpositive variance {sigma2[nonpositive[0]]!r}",
                row=int(nonpositive[0]) + 1,
                column="sigma2_omega",
            )

        object.__setattr__(self, "gamma2", _readonly(gamma2))
        object.__setattr__(self, "omega", _readonly(omega))
        object.__setattr__(self, "sigma2_omega", _readonly(sigma2))

    @property
    def J(self) -> int:
        return int(self.gamma2.shape[0])

    @property
    def sigma_omega_inv(self) -> np.ndarray:
        """Σ_Ω⁻¹ 的对角元。"""
        return 1.0 / self.sigma2_omega
