"""结果输出模块。

负责写出结果 CSV 与运行清单（manifest）。清单记录命令、参数、解析后的配置、
种子与输入文件摘要，不含墙钟时间，保证同样输入下逐字节一致。
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from src.core.ingest import write_frame
from src.estimators.mcem import EstimateResult
from src.utils.config import Config, default_output_dir, get_config

logger = logging.getLogger(__name__)

PACKAGE_VERSION = "0.1.0"
MANIFEST_SUFFIX = ".manifest.json"


def file_digest(path: str | Path) -> str:
    """文件内容的 SHA-256。"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    return value


def estimate_frame(results: Sequence[EstimateResult]) -> pd.DataFrame:
    """估计结果表，每个估计量一行。"""
    return pd.DataFrame([r.to_dict() for r in results])


def trace_frame(result: EstimateResult) -> pd.DataFrame:
    """EM 迭代轨迹：iteration, beta, mu_alpha, p0。"""
    return pd.DataFrame(
        {
            "iteration": np.arange(1, len(result.trace) + 1),
            "beta": [r.beta for r in result.trace],
            "mu_alpha": [r.mu_alpha for r in result.trace],
            "p0": [r.p0 for r in result.trace],
        }
    )


class Reporter:
    """结果写出器。

    未指定路径时写到输出目录下的默认文件名；显式给出的路径原样使用，
    相对路径按当前工作目录解释，与命令行习惯一致。
    """

    def __init__(self, output_path: str | Path | None = None, config: Config | None = None) -> None:
        self._config = config or get_config()
        self._output_path = Path(output_path) if output_path else default_output_dir(self._config)

    @property
    def output_path(self) -> Path:
        return self._output_path

    def resolve(self, path: str | Path | None, default_name: str) -> Path:
        """解析输出文件路径：None 取输出目录下的 default_name。"""
        if path is None:
            return self._output_path / default_name
        return Path(path)

    def save_frame(self, frame: pd.DataFrame, path: str | Path) -> Path:
        out = write_frame(frame, path)
        logger.info("reporter.results written path=%s rows=%s", out, len(frame))
        return out

    def save_manifest(
        self,
        results_path: str | Path,
        command: str,
        argv: Sequence[str],
        config: Config,
        seed: int | None = None,
        inputs: Sequence[str | Path] = (),
        extra: dict[str, Any] | None = None,
    ) -> Path:
        """在结果文件旁写出 <results>.manifest.json。"""
        results_path = Path(results_path)
        manifest = {
            "command": command,
            "argv": list(argv),
            "version": PACKAGE_VERSION,
            "seed": seed,
            "config": config.model_dump(mode="json"),
            "inputs": {str(p): file_digest(p) for p in inputs},
            "outputs": {results_path.name: file_digest(results_path)},
        }
        if extra:
            manifest["extra"] = extra
        out = results_path.with_name(results_path.name + MANIFEST_SUFFIX)
        out.write_text(
            json.dumps(_jsonable(manifest), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        logger.debug("reporter.manifest written path=%s", out)
        return out


__all__ = [
    "MANIFEST_SUFFIX",
    "Reporter",
    "estimate_frame",
    "file_digest",
    "trace_frame",
]
