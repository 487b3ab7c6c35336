# src/common/config_loader.py
"""
配置加载器
从 config/ 目录读取YAML运行配置，缺失文件时回退默认配置
"""
import dataclasses
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar, Union

import yaml

from .errors import ConfigError
from .logger import get_logger

logger = get_logger(__name__)

T = TypeVar("T")


class ConfigLoader:
    def __init__(self, config_dir: Union[str, Path] = "config"):
        self.config_dir = Path(config_dir)

    def resolve(self, name_or_path: Union[str, Path]) -> Path:
        """接受配置名（如 toy）或文件路径"""
        candidate = Path(name_or_path)
        if candidate.suffix in (".yaml", ".yml") or candidate.exists():
            return candidate
        return self.config_dir / f"{name_or_path}.yaml"

    def load(self, name_or_path: Union[str, Path, None] = None) -> Dict[str, Any]:
        """加载配置文件，返回原始字典"""
        if name_or_path is None:
            return {}

        config_file = self.resolve(name_or_path)
        if not config_file.exists():
            logger.warning(f"配置文件不存在: {config_file}，使用默认配置")
            return {}

        try:
            with open(config_file, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"配置文件解析失败: {config_file}", {"error": str(e)}) from e

        if not isinstance(data, dict):
            raise ConfigError(f"配置文件顶层必须是映射: {config_file}")
        logger.info(f"加载配置: {config_file}")
        return data

    def save(self, config: Mapping[str, Any], path: Union[str, Path]) -> Path:
        """保存配置（数据类会先转换为字典）"""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            yaml.safe_dump(to_plain(config), f, default_flow_style=False, allow_unicode=True, sort_keys=False)
        return target


def build_dataclass(cls: Type[T], section: Optional[Mapping[str, Any]], section_name: str) -> T:
    """
    用配置段覆盖数据类默认值

    未知键直接报错，避免拼写错误被静默忽略
    """
    section = dict(section or {})
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - set(known))
    if unknown:
        raise ConfigError(f"配置段 {section_name} 包含未知键", {"keys": unknown})

    kwargs = {}
    for key, value in section.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"配置段 {section_name} 无效", {"error": str(e)}) from e


def to_plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {k: to_plain(v) for k, v in dataclasses.asdict(value).items()}
    if isinstance(value, Mapping):
        return {k: to_plain(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return [to_plain(v) for v in value]
    return value
