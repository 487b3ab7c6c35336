#!/usr/bin/env python3
"""
布局编辑：插入、删除、位姿变换
所有编辑返回新的布局对象，原布局保持不变
"""
from dataclasses import dataclass, field, replace

import numpy as np

from src.common.errors import DuplicateInstanceError, UnknownInstanceError

from .primitives import LayoutInstance, Pose, SceneLayout


@dataclass(frozen=True, eq=False)
class DeltaPose:
    """
    位姿增量：绕实例中心旋转，再平移，再按分量缩放尺寸

    R' = ΔR·R, t' = t + Δt, s' = s ⊙ scale
    """
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", np.array(self.scale, dtype=np.float64).reshape(3))

    @classmethod
    def translate(cls, offset) -> "DeltaPose":
        return cls(translation=offset)

    @classmethod
    def yaw(cls, degrees: float) -> "DeltaPose":
        return cls(rotation=Pose.from_yaw(degrees, np.zeros(3), np.ones(3)).rotation)

    @property
    def is_rigid(self) -> bool:
        return bool(np.all(self.scale == 1.0))

    def apply(self, pose: Pose) -> Pose:
        return Pose(self.rotation @ pose.rotation, pose.translation + self.translation, pose.size * self.scale)

    def apply_to_points(self, points: np.ndarray, pivot: np.ndarray) -> np.ndarray:
        """刚体部分作用于世界点，pivot 为编辑前的实例中心"""
        points = np.asarray(points, dtype=np.float64)
        return (points - pivot) @ self.rotation.T + pivot + self.translation


def insert_instance(layout: SceneLayout, inst: LayoutInstance) -> SceneLayout:
    if layout.has_instance(inst.id):
        raise DuplicateInstanceError(f"实例id已存在: {inst.id}")
    return replace(layout, instances=layout.instances + (inst,))


def remove_instance(layout: SceneLayout, instance_id: int) -> SceneLayout:
    if not layout.has_instance(instance_id):
        raise UnknownInstanceError(f"实例不存在: {instance_id}")
    return replace(layout, instances=tuple(inst for inst in layout.instances if inst.id != instance_id))


def transform_instance(layout: SceneLayout, instance_id: int, delta: DeltaPose) -> SceneLayout:
    target = layout.instance(instance_id)
    moved = target.with_pose(delta.apply(target.pose))
    return replace(layout, instances=tuple(moved if inst.id == instance_id else inst for inst in layout.instances))


def next_instance_id(layout: SceneLayout) -> int:
    return max([inst.id for inst in layout.instances] + [0]) + 1
