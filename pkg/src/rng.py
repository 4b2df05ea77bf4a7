"""可复现的随机数工具。

所有随机操作都经过 SeededGenerator：基于 Philox 计数器生成器，
以 64 位种子初始化；split(seed, label) 为不同标签派生互不相关的流。
Gamma 一律使用形状/速率（rate）参数化。
"""

from __future__ import annotations

import hashlib
from typing import Any

import numpy as np

SEED_MASK = (1 << 64) - 1


def _label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, label: str) -> int:
    """由 (种子, 标签) 派生新的 64 位种子，结果确定。"""
    seq = np.random.SeedSequence(entropy=int(seed) & SEED_MASK, spawn_key=(_label_key(label),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class SeededGenerator:
    """Philox 计数器生成器的轻量包装。

    单一所有者使用；需要共享时通过 split 派生。
    """

    def __init__(self, seed: int) -> None:
        self._seed = int(seed) & SEED_MASK
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self._seed)))

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def state(self) -> dict[str, Any]:
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value: dict[str, Any]) -> None:
        self._gen.bit_generator.state = value

    @property
    def numpy(self) -> np.random.Generator:
        """底层 numpy Generator（批量抽样用）。"""
        return self._gen

    def split(self, label: str) -> SeededGenerator:
        return split(self._seed, label)


def split(seed: int, label: str) -> SeededGenerator:
    """按标签派生独立流：相同 (seed, label) 得到相同流，不同标签互不相同。"""
    return SeededGenerator(derive_seed(seed, label))


def draw_normal(gen: SeededGenerator, mu: Any, sigma2: Any, size: Any = None) -> Any:
    """N(mu, sigma2) 抽样。"""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(~(sigma2 > 0)):
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    return gen.numpy.normal(mu, np.sqrt(sigma2), size=size)


def draw_gamma(gen: SeededGenerator, shape: Any, rate: Any, size: Any = None) -> Any:
    """Gamma(shape, rate) 抽样，均值为 shape / rate。"""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)):
        raise ValueError(f"gamma shape and rate must be positive, got shape={shape}, rate={rate}")
    return gen.numpy.gamma(shape, 1.0 / rate, size=size)


def draw_bernoulli(gen: SeededGenerator, p: Any, size: Any = None) -> Any:
    """Ber(p) 抽样；p 可以是向量。p = 0 时恒为 0，p = 1 时恒为 1。"""
    p = np.asarray(p, dtype=float)
    if np.any(~((p >= 0.0) & (p <= 1.0))):
        raise ValueError(f"bernoulli probability must lie in [0, 1], got {p}")
    if size is None:
        size = p.shape
    u = gen.numpy.random(size=size)
    result = (u < p).astype(np.int8)
    if result.ndim == 0:
        return int(result)
    return result


def draw_uniform(gen: SeededGenerator, a: Any, b: Any, size: Any = None) -> Any:
    """U[a, b) 抽样。"""
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(~(a_arr < b_arr)):
        raise ValueError(f"uniform bounds must satisfy a < b, got a={a}, b={b}")
    return gen.numpy.uniform(a, b, size=size)


def draw_mvn_chol(gen: SeededGenerator, mean: np.ndarray, chol_factor: np.ndarray) -> np.ndarray:
    """多元正态抽样：mean + L z，L 为协方差的下三角 Cholesky 因子。"""
    mean = np.asarray(mean, dtype=float)
    chol_factor = np.asarray(chol_factor, dtype=float)
    if chol_factor.shape != (mean.shape[0], mean.shape[0]):
        raise ValueError(
            f"cholesky factor shape {chol_factor.shape} does not match mean length {mean.shape[0]}"
        )
    z = gen.numpy.standard_normal(mean.shape[0])
    return mean + chol_factor @ z


__all__ = [
    "SeededGenerator",
    "derive_seed",
    "split",
    "draw_normal",
    "draw_gamma",
    "draw_bernoulli",
    "draw_uniform",
    "draw_mvn_chol",
]
