#!/usr/bin/env python3
"""
日志系统
控制台 + logs/ 目录文件双输出，级别由参数或环境变量 LAYOUTFORGE_LOG 决定
"""
import os
import sys
from pathlib import Path
from typing import Optional, Union

from loguru import logger as _logger

LOG_ENV_VAR = "LAYOUTFORGE_LOG"
LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {extra[name]} - {level} - {message}"

_logger.configure(extra={"name": "layoutforge"})


def resolve_level(level: Optional[str] = None) -> str:
    """参数优先，其次环境变量，默认INFO"""
    if level:
        return level.upper()
    return os.environ.get(LOG_ENV_VAR, "INFO").upper()


def setup_logging(level: Optional[str] = None,
                  log_dir: Optional[Union[str, Path]] = None) -> str:
    """
    设置日志系统

    Args:
        level: 日志级别，None时读取环境变量
        log_dir: 日志目录，None时只输出到控制台

    Returns:
        实际生效的日志级别
    """
    resolved = resolve_level(level)
    _logger.remove()
    _logger.add(sys.stderr, level=resolved, format=LOG_FORMAT)

    if log_dir is not None:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        _logger.add(
            log_path / "layoutforge.log",
            level=resolved,
            format=LOG_FORMAT,
            rotation="10 MB",
            encoding="utf-8",
        )
    return resolved


def get_logger(name: str):
    """获取绑定模块名的日志记录器"""
    return _logger.bind(name=name)
