#!/usr/bin/env python3
"""MR-EB 命令行入口。"""

import logging
import sys

import click

from src.cli import cli
from src.error_types import MrebError
from src.utils.config import get_env

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging() -> None:
    """日志写到 stderr，stdout 只留给命令输出。

    MREB_LOG_LEVEL 可覆盖默认的 INFO，-v/-q 再在 src 记录器上调整。
    """
    level_name = get_env("MREB_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stderr)],
    )


def main() -> None:
    setup_logging()

    try:
        cli(standalone_mode=True)
    except KeyboardInterrupt:
        click.echo("\n操作已取消", err=True)
        sys.exit(130)
    except MrebError as e:
        # 命令之外（如导入阶段读取配置）抛出的领域异常
        logging.getLogger("mreb").error("main.failed error_type=%s", e.error_type.value)
        click.echo(f"✗ 错误: {e}", err=True)
        sys.exit(e.exit_code)
    except Exception as e:
        logging.exception("main.crashed")
        click.echo(f"✗ 错误: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
