#!/usr/bin/env python3
"""
场景编辑

物体编辑（变换、重复、缩放、删除）同时作用于布局实例与物体网格位姿，无需重新训练；
背景编辑（插入/删除背景实例）与风格切换在新布局/新风格下做短程 LG-VSD 微调。

编辑脚本为 JSON 列表，例如:
    [{"op": "transform", "instance": 3, "translation": [2, 0, 0], "yaw_deg": 15},
     {"op": "repeat", "instance": 3, "new_id": 9, "translation": [0, 4, 0]},
     {"op": "scale", "instance": 3, "scale": [1.2, 1.2, 1.0]},
     {"op": "remove_object", "instance": 4},
     {"op": "insert_stuff", "instance": {"id": 10, "class": 1, "shape": "cuboid", ...}},
     {"op": "remove_stuff", "instance": 2},
     {"op": "style", "style": "snow"}]
"""
import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.common.errors import EditError, LayoutParseError, UnknownInstanceError
from src.common.logger import get_logger
from src.field.scene_field import SceneField
from src.guidance.denoiser import STYLE_NAMES
from src.layout.editing import DeltaPose, insert_instance, next_instance_id, remove_instance, transform_instance
from src.layout.layout_io import instance_from_dict
from src.layout.primitives import LayoutInstance, Pose, SceneLayout

from .config import RunConfig
from .optimize import GuidanceStack, TrainResult, optimize_scene
from .trajectory import TrajectorySampler

logger = get_logger(__name__)


@dataclass(frozen=True)
class TransformObject:
    instance: int
    delta: DeltaPose


@dataclass(frozen=True)
class RepeatObject:
    instance: int
    delta: DeltaPose
    new_id: Optional[int] = None


@dataclass(frozen=True)
class ScaleObject:
    instance: int
    scale: Tuple[float, float, float]


@dataclass(frozen=True)
class RemoveObject:
    instance: int


@dataclass(frozen=True)
class InsertStuff:
    instance: LayoutInstance


@dataclass(frozen=True)
class RemoveStuff:
    instance: int


@dataclass(frozen=True)
class ChangeStyle:
    style: int


Edit = Union[TransformObject, RepeatObject, ScaleObject, RemoveObject, InsertStuff, RemoveStuff, ChangeStyle]
FINE_TUNED_EDITS = (InsertStuff, RemoveStuff, ChangeStyle)


@dataclass
class EditOutcome:
    field: SceneField
    layout: SceneLayout
    style: int
    fine_tuned: Optional[TrainResult] = None

    def __iter__(self) -> Iterator[Any]:
        return iter((self.field, self.layout))


# ----------------------------------------------------------------------
# 脚本解析
# ----------------------------------------------------------------------
def _delta_from(entry: Mapping[str, Any], where: str) -> DeltaPose:
    try:
        rotation = np.eye(3)
        if "rotation" in entry:
            rotation = Pose.validated(np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3),
                                      np.zeros(3), np.ones(3)).rotation
        if "yaw_deg" in entry:
            rotation = DeltaPose.yaw(float(entry["yaw_deg"])).rotation @ rotation
        translation = np.asarray(entry.get("translation", (0.0, 0.0, 0.0)), dtype=np.float64).reshape(3)
    except (TypeError, ValueError) as e:
        raise LayoutParseError(f"{where} 位姿增量格式错误") from e
    return DeltaPose(rotation=rotation, translation=translation)


def _style_token(value: Any) -> int:
    if isinstance(value, str):
        if value not in STYLE_NAMES:
            raise LayoutParseError(f"未知风格: {value}", {"allowed": list(STYLE_NAMES)})
        return STYLE_NAMES.index(value)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise LayoutParseError(f"风格必须是名称或整数token: {value!r}", {"allowed": list(STYLE_NAMES)})
    if not 0 <= int(value) < len(STYLE_NAMES):
        raise LayoutParseError(f"风格token超出范围: {value}", {"allowed": list(range(len(STYLE_NAMES)))})
    return int(value)


def parse_edit(entry: Mapping[str, Any], where: str = "edit") -> Edit:
    if not isinstance(entry, Mapping) or "op" not in entry:
        raise LayoutParseError(f"{where} 必须是包含 op 字段的对象")
    op = entry["op"]
    if op == "style":
        return ChangeStyle(_style_token(entry.get("style")))
    if "instance" not in entry:
        raise LayoutParseError(f"{where} 缺少字段 'instance'")
    if op == "insert_stuff":
        return InsertStuff(instance_from_dict(entry["instance"], where=f"{where}.instance"))
    instance = int(entry["instance"])
    if op == "transform":
        return TransformObject(instance, _delta_from(entry, where))
    if op == "repeat":
        new_id = entry.get("new_id")
        return RepeatObject(instance, _delta_from(entry, where), None if new_id is None else int(new_id))
    if op == "scale":
        scale = np.broadcast_to(np.asarray(entry.get("scale", 1.0), dtype=np.float64), (3,))
        if np.any(scale <= 0):
            raise LayoutParseError(f"{where} 缩放系数必须为正")
        return ScaleObject(instance, tuple(float(v) for v in scale))
    if op == "remove_object":
        return RemoveObject(instance)
    if op == "remove_stuff":
        return RemoveStuff(instance)
    raise LayoutParseError(f"{where} 未知编辑操作: {op}")


def parse_edit_script(document: Sequence[Mapping[str, Any]]) -> List[Edit]:
    if not isinstance(document, list):
        raise LayoutParseError("编辑脚本顶层必须是列表")
    return [parse_edit(entry, f"edits[{index}]") for index, entry in enumerate(document)]


def load_edit_script(path: Union[str, Path]) -> List[Edit]:
    script = Path(path)
    if not script.exists():
        raise LayoutParseError(f"编辑脚本不存在: {script}")
    try:
        document = json.loads(script.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise LayoutParseError(f"编辑脚本JSON格式错误: {script}", {"line": e.lineno}) from e
    return parse_edit_script(document)


# ----------------------------------------------------------------------
# 应用编辑
# ----------------------------------------------------------------------
def _object(layout: SceneLayout, instance_id: int) -> LayoutInstance:
    if not layout.has_instance(instance_id):
        raise UnknownInstanceError(f"实例不存在: {instance_id}")
    inst = layout.instance(instance_id)
    if not inst.is_object:
        raise EditError(f"实例 {instance_id} 不是物体，不能做物体编辑")
    return inst


def _stuff(layout: SceneLayout, instance_id: int) -> LayoutInstance:
    if not layout.has_instance(instance_id):
        raise UnknownInstanceError(f"实例不存在: {instance_id}")
    inst = layout.instance(instance_id)
    if inst.is_object:
        raise EditError(f"实例 {instance_id} 是物体，请使用 remove_object")
    return inst


def apply_edit(field: SceneField, layout: SceneLayout, edit: Edit) -> SceneLayout:
    """就地修改场的物体网格，返回新布局；不做微调"""
    if isinstance(edit, TransformObject):
        _object(layout, edit.instance)
        layout = transform_instance(layout, edit.instance, edit.delta)
        field.set_object_pose(edit.instance, layout.instance(edit.instance).pose)
    elif isinstance(edit, ScaleObject):
        _object(layout, edit.instance)
        layout = transform_instance(layout, edit.instance, DeltaPose(scale=edit.scale))
        field.set_object_pose(edit.instance, layout.instance(edit.instance).pose)
    elif isinstance(edit, RepeatObject):
        source = _object(layout, edit.instance)
        new_id = next_instance_id(layout) if edit.new_id is None else edit.new_id
        clone = LayoutInstance(new_id, source.class_id, source.shape, edit.delta.apply(source.pose), True)
        layout = insert_instance(layout, clone)
        field.copy_object_grid(edit.instance, clone)
    elif isinstance(edit, RemoveObject):
        _object(layout, edit.instance)
        layout = remove_instance(layout, edit.instance)
        field.remove_object_grid(edit.instance)
    elif isinstance(edit, InsertStuff):
        if edit.instance.is_object:
            raise EditError(f"insert_stuff 不能插入物体实例: {edit.instance.id}")
        layout = insert_instance(layout, edit.instance)
    elif isinstance(edit, RemoveStuff):
        _stuff(layout, edit.instance)
        layout = remove_instance(layout, edit.instance)
    elif not isinstance(edit, ChangeStyle):
        raise EditError(f"未知编辑类型: {type(edit).__name__}")
    return layout


def fine_tune_steps(run_config: RunConfig) -> int:
    return int(round(run_config.train.edit_fraction * run_config.train.optimize_steps))


def edit_scene(field: SceneField, layout: SceneLayout, edits: Union[Edit, Sequence[Edit]],
               stack: Optional[GuidanceStack], run_config: RunConfig,
               sampler: Optional[TrajectorySampler] = None, style: Optional[int] = None,
               **trainer_kwargs) -> EditOutcome:
    """
    依次应用编辑，返回新的 (场, 布局)；输入的场与布局保持不变

    物体刚体变换只改位姿，渲染无需重新训练；背景编辑与风格切换之后，
    以 edit_fraction·optimize_steps 步在新布局/新风格下微调（需要 stack 与 sampler）

    Raises:
        UnknownInstanceError: 实例不存在
        EditError: 编辑与实例类型不符
    """
    edits = [edits] if not isinstance(edits, (list, tuple)) else list(edits)
    edited = copy.deepcopy(field)
    current_style = run_config.train.style if style is None else style
    for edit in edits:
        layout = apply_edit(edited, layout, edit)
        if isinstance(edit, ChangeStyle):
            current_style = edit.style
        logger.info(f"应用编辑: {edit}")

    needs_tuning = any(isinstance(edit, FINE_TUNED_EDITS) for edit in edits)
    steps = fine_tune_steps(run_config)
    result = None
    if needs_tuning and steps > 0:
        if stack is None or sampler is None:
            logger.warning("背景或风格编辑需要微调，但未提供引导组件或相机轨迹，跳过微调")
        else:
            result = optimize_scene(layout, edited, stack.with_layout(layout, run_config), sampler, run_config,
                                    steps=steps, style=current_style, phase="edit", **trainer_kwargs)
    return EditOutcome(edited, layout, current_style, result)
