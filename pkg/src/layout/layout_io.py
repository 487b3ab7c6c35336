#!/usr/bin/env python3
"""
布局文件读写
JSON格式:
    {"version": 1,
     "classes": [{"id", "name", "color": [r, g, b]}],
     "instances": [{"id", "class", "shape": "cuboid"|"ellipsoid"|"plane",
                    "rotation": [9个数，行优先], "translation": [3], "size": [3], "object": bool}],
     "bounds": {"min": [3], "max": [3]}   # 可选
    }
所有长度单位为米
"""
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np

from src.common.errors import LayoutForgeError, LayoutParseError, LayoutValidationError
from src.common.helpers import atomic_write_text
from src.common.logger import get_logger

from .primitives import (DEFAULT_SLAB_THICKNESS, LayoutInstance, Pose, SceneLayout,
                         SemanticClass, ShapeKind)

logger = get_logger(__name__)

LAYOUT_VERSION = 1
_INSTANCE_KEYS = ("id", "class", "shape", "rotation", "translation", "size")


def _require(mapping: Mapping[str, Any], key: str, where: str):
    if key not in mapping:
        raise LayoutParseError(f"{where} 缺少字段 '{key}'")
    return mapping[key]


def _numbers(values, count: int, where: str) -> np.ndarray:
    try:
        array = np.asarray(values, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as e:
        raise LayoutParseError(f"{where} 必须是数值列表") from e
    if array.size != count:
        raise LayoutParseError(f"{where} 需要 {count} 个数值，实际 {array.size}")
    return array


def instance_from_dict(entry: Mapping[str, Any], slab_thickness: float = DEFAULT_SLAB_THICKNESS,
                       where: str = "instance") -> LayoutInstance:
    if not isinstance(entry, Mapping):
        raise LayoutParseError(f"{where} 必须是对象")
    for key in _INSTANCE_KEYS:
        _require(entry, key, where)
    try:
        shape = ShapeKind(entry["shape"])
    except ValueError as e:
        raise LayoutParseError(f"{where} 未知形状: {entry['shape']}") from e

    size = _numbers(entry["size"], 3, f"{where}.size")
    if shape is ShapeKind.PLANE and np.all(size > 0):
        # 平面按固定厚度薄板参与采样
        size = np.array([size[0], size[1], slab_thickness])
    pose = Pose.validated(
        _numbers(entry["rotation"], 9, f"{where}.rotation").reshape(3, 3),
        _numbers(entry["translation"], 3, f"{where}.translation"),
        size,
    )
    return LayoutInstance(
        id=int(entry["id"]),
        class_id=int(entry["class"]),
        shape=shape,
        pose=pose,
        is_object=bool(entry.get("object", False)),
    )


def layout_from_dict(document: Mapping[str, Any],
                     slab_thickness: float = DEFAULT_SLAB_THICKNESS) -> SceneLayout:
    """从已解析的JSON文档构建并校验布局"""
    if not isinstance(document, Mapping):
        raise LayoutParseError("布局文档顶层必须是对象")
    version = document.get("version", LAYOUT_VERSION)
    if version != LAYOUT_VERSION:
        raise LayoutParseError(f"不支持的布局版本: {version}")

    classes = []
    for index, entry in enumerate(_require(document, "classes", "布局")):
        where = f"classes[{index}]"
        color = tuple(int(c) for c in entry.get("color", (0, 0, 0)))
        classes.append(SemanticClass(int(_require(entry, "id", where)), str(_require(entry, "name", where)), color))

    instances = [instance_from_dict(entry, slab_thickness, f"instances[{index}]")
                 for index, entry in enumerate(document.get("instances", []))]

    bounds = None
    if document.get("bounds") is not None:
        raw = document["bounds"]
        lo = tuple(float(v) for v in _numbers(_require(raw, "min", "bounds"), 3, "bounds.min"))
        hi = tuple(float(v) for v in _numbers(_require(raw, "max", "bounds"), 3, "bounds.max"))
        if any(a >= b for a, b in zip(lo, hi)):
            raise LayoutValidationError("bounds.min 必须逐分量小于 bounds.max")
        bounds = (lo, hi)

    return SceneLayout(tuple(classes), tuple(instances), bounds, slab_thickness)


def load_layout(path: Union[str, Path], slab_thickness: float = DEFAULT_SLAB_THICKNESS) -> SceneLayout:
    """
    加载并校验布局文件

    Raises:
        LayoutParseError: 文件不存在或JSON格式错误
        LayoutValidationError: 违反类型不变量（重复id、非正尺寸、非正交旋转）
    """
    layout_file = Path(path)
    if not layout_file.exists():
        raise LayoutParseError(f"布局文件不存在: {layout_file}")
    try:
        document = json.loads(layout_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise LayoutParseError(f"布局文件JSON格式错误: {layout_file}", {"line": e.lineno}) from e

    try:
        layout = layout_from_dict(document, slab_thickness)
    except LayoutForgeError:
        logger.error(f"布局校验失败: {layout_file}")
        raise
    logger.info(f"加载布局: {layout_file}，{len(layout.classes)} 个类别，{len(layout.instances)} 个实例")
    return layout


def layout_to_dict(layout: SceneLayout) -> Dict[str, Any]:
    document: Dict[str, Any] = {
        "version": LAYOUT_VERSION,
        "classes": [{"id": c.id, "name": c.name, "color": list(c.color)} for c in layout.classes],
        "instances": [
            {
                "id": inst.id,
                "class": inst.class_id,
                "shape": inst.shape.value,
                "rotation": inst.pose.rotation.reshape(-1).tolist(),
                "translation": inst.pose.translation.tolist(),
                "size": inst.pose.size.tolist(),
                "object": inst.is_object,
            }
            for inst in layout.instances
        ],
    }
    if layout.bounds is not None:
        document["bounds"] = {"min": list(layout.bounds[0]), "max": list(layout.bounds[1])}
    return document


def save_layout(layout: SceneLayout, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, json.dumps(layout_to_dict(layout), indent=2))
