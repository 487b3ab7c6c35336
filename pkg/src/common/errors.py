#!/usr/bin/env python3
"""
统一异常定义
所有业务异常都继承自 LayoutForgeError，并携带 ErrorKind 用于命令行退出码映射
"""
from enum import Enum
from typing import Any, Dict, Optional


class ErrorKind(Enum):
    """异常类型枚举"""
    PARSE = "解析错误"
    VALIDATION = "校验错误"
    CONFIG = "配置错误"
    UNKNOWN_INSTANCE = "未知实例"
    DUPLICATE_INSTANCE = "实例重复"
    GRID_EXISTS = "网格已存在"
    GRID_CONTRACT = "网格契约违反"
    SHAPE_MISMATCH = "形状不匹配"
    INVALID_DIRECTION = "方向非单位向量"
    DEPTH_ALIGNMENT = "深度对齐失败"
    TRAINING_DIVERGED = "训练发散"
    CHECKPOINT_FORMAT = "检查点格式错误"
    EDIT = "编辑错误"


# 命令行退出码：校验类错误为3，其余运行期错误为1
EXIT_CODES: Dict[ErrorKind, int] = {
    ErrorKind.PARSE: 3,
    ErrorKind.VALIDATION: 3,
    ErrorKind.CONFIG: 3,
}


class LayoutForgeError(Exception):
    """项目异常基类"""

    kind: ErrorKind = ErrorKind.VALIDATION

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.kind, 1)

    def __str__(self) -> str:
        if self.details:
            return f"[{self.kind.value}] {self.message} {self.details}"
        return f"[{self.kind.value}] {self.message}"


class LayoutParseError(LayoutForgeError):
    kind = ErrorKind.PARSE


class LayoutValidationError(LayoutForgeError):
    kind = ErrorKind.VALIDATION


class ConfigError(LayoutForgeError):
    kind = ErrorKind.CONFIG


class UnknownInstanceError(LayoutForgeError):
    kind = ErrorKind.UNKNOWN_INSTANCE


class DuplicateInstanceError(LayoutForgeError):
    kind = ErrorKind.DUPLICATE_INSTANCE


class GridExistsError(LayoutForgeError):
    kind = ErrorKind.GRID_EXISTS


class GridContractError(LayoutForgeError):
    kind = ErrorKind.GRID_CONTRACT


class ShapeMismatchError(LayoutForgeError):
    kind = ErrorKind.SHAPE_MISMATCH


class InvalidDirectionError(LayoutForgeError):
    kind = ErrorKind.INVALID_DIRECTION


class DepthAlignmentError(LayoutForgeError):
    kind = ErrorKind.DEPTH_ALIGNMENT


class TrainingDivergedError(LayoutForgeError):
    kind = ErrorKind.TRAINING_DIVERGED


class CheckpointFormatError(LayoutForgeError):
    kind = ErrorKind.CHECKPOINT_FORMAT


class EditError(LayoutForgeError):
    kind = ErrorKind.EDIT
