#!/usr/bin/env python3
"""
布局基元 - 语义类别、位姿、实例与场景布局
以及点包含判断、光线区间求交两个几何内核

规范空间：立方体为单位立方体 [-1/2, 1/2]^3，椭球为其内切球（半径1/2），
平面为固定厚度的薄板，几何上按立方体处理。
尺寸 size 存储完整边长，内部换算为半边长。
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from src.common.errors import InvalidDirectionError, LayoutValidationError, UnknownInstanceError

ROTATION_TOLERANCE = 1e-6
DEFAULT_SLAB_THICKNESS = 0.2  # 米
SKY_CLASS_ID = 0


class ShapeKind(Enum):
    """基元形状"""
    CUBOID = "cuboid"
    ELLIPSOID = "ellipsoid"
    PLANE = "plane"


@dataclass(frozen=True)
class SemanticClass:
    """语义类别，id 0 保留给天空/空白"""
    id: int
    name: str
    color: Tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if len(self.color) != 3 or any(not 0 <= c <= 255 for c in self.color):
            raise LayoutValidationError("类别颜色必须为0-255的RGB三元组", {"class": self.name})


def _frozen_array(values, shape) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(shape)
    array.setflags(write=False)
    return array


def project_to_rotation(matrix: np.ndarray) -> np.ndarray:
    """最近旋转矩阵投影（容差内的文件舍入误差）"""
    return Rotation.from_matrix(matrix).as_matrix()


def check_rotation(matrix: np.ndarray, tolerance: float = ROTATION_TOLERANCE) -> None:
    orthogonality = np.abs(matrix.T @ matrix - np.eye(3)).max()
    determinant = np.linalg.det(matrix)
    if orthogonality > tolerance or abs(determinant - 1.0) > tolerance:
        raise LayoutValidationError(
            "旋转矩阵不是正交矩阵或行列式不为+1",
            {"orthogonality_error": float(orthogonality), "det": float(determinant)},
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """
    实例位姿 (R_k, t_k, s_k)

    Attributes:
        rotation: 3x3 旋转矩阵，世界系 <- 规范系
        translation: 中心位置（米）
        size: 三个方向完整边长（米），全部为正
    """
    rotation: np.ndarray
    translation: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen_array(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen_array(self.translation, (3,)))
        object.__setattr__(self, "size", _frozen_array(self.size, (3,)))
        if not np.all(np.isfinite(self.size)) or np.any(self.size <= 0):
            raise LayoutValidationError("尺寸必须全部为正", {"size": self.size.tolist()})
        if not np.all(np.isfinite(self.translation)):
            raise LayoutValidationError("平移向量包含非有限值")
        check_rotation(self.rotation)

    @classmethod
    def identity(cls, size=(1.0, 1.0, 1.0)) -> "Pose":
        return cls(np.eye(3), np.zeros(3), size)

    @classmethod
    def from_yaw(cls, yaw_deg: float, translation, size) -> "Pose":
        rotation = Rotation.from_euler("z", yaw_deg, degrees=True).as_matrix()
        return cls(rotation, translation, size)

    @classmethod
    def validated(cls, rotation, translation, size) -> "Pose":
        """先校验容差，再投影到最近旋转矩阵"""
        matrix = np.array(rotation, dtype=np.float64).reshape(3, 3)
        check_rotation(matrix)
        if not np.array_equal(matrix.T @ matrix, np.eye(3)):
            matrix = project_to_rotation(matrix)
        return cls(matrix, translation, size)

    def to_canonical(self, points: np.ndarray) -> np.ndarray:
        """世界坐标 -> 规范坐标，逐分量除以边长: R^T (p - t) / s"""
        return ((np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation) / self.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation)
                and np.array_equal(self.size, other.size))

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes(), self.size.tobytes()))


@dataclass(frozen=True)
class LayoutInstance:
    id: int
    class_id: int
    shape: ShapeKind
    pose: Pose
    is_object: bool = False

    def with_pose(self, pose: Pose) -> "LayoutInstance":
        return replace(self, pose=pose)


@dataclass(frozen=True)
class SceneLayout:
    """场景布局 L：类别表 + 有序实例列表"""
    classes: Tuple[SemanticClass, ...]
    instances: Tuple[LayoutInstance, ...] = ()
    bounds: Optional[Tuple[Tuple[float, float, float], Tuple[float, float, float]]] = None
    slab_thickness: float = field(default=DEFAULT_SLAB_THICKNESS, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "instances", tuple(self.instances))

        class_ids = [c.id for c in self.classes]
        if len(set(class_ids)) != len(class_ids):
            raise LayoutValidationError("类别id重复", {"ids": class_ids})
        sky = [c for c in self.classes if c.id == SKY_CLASS_ID]
        if sky and sky[0].name not in ("sky", "void"):
            raise LayoutValidationError("类别id 0 保留给 sky/void", {"name": sky[0].name})

        instance_ids = [inst.id for inst in self.instances]
        if len(set(instance_ids)) != len(instance_ids):
            raise LayoutValidationError("实例id重复", {"ids": instance_ids})
        for inst in self.instances:
            if inst.class_id not in class_ids or inst.class_id == SKY_CLASS_ID:
                raise LayoutValidationError("实例引用了不存在的类别", {"instance": inst.id, "class": inst.class_id})

    def class_by_id(self, class_id: int) -> SemanticClass:
        for cls in self.classes:
            if cls.id == class_id:
                return cls
        raise LayoutValidationError(f"未知类别: {class_id}")

    def class_by_name(self, name: str) -> SemanticClass:
        for cls in self.classes:
            if cls.name == name:
                return cls
        raise LayoutValidationError(f"未知类别名: {name}")

    def instance(self, instance_id: int) -> LayoutInstance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise UnknownInstanceError(f"实例不存在: {instance_id}")

    def has_instance(self, instance_id: int) -> bool:
        return any(inst.id == instance_id for inst in self.instances)

    @property
    def class_count(self) -> int:
        """语义通道数 = 最大类别id + 1（通道下标即类别id）"""
        return max([c.id for c in self.classes] + [SKY_CLASS_ID]) + 1

    def palette(self) -> Dict[int, Tuple[int, int, int]]:
        colors = {c.id: tuple(c.color) for c in self.classes}
        colors.setdefault(SKY_CLASS_ID, (0, 0, 0))
        return colors

    def object_instances(self) -> List[LayoutInstance]:
        return [inst for inst in self.instances if inst.is_object]

    def same_up_to_order(self, other: "SceneLayout") -> bool:
        mine = sorted(self.instances, key=lambda inst: inst.id)
        theirs = sorted(other.instances, key=lambda inst: inst.id)
        return self.classes == other.classes and mine == theirs and self.bounds == other.bounds


# ---------------------------------------------------------------------------
# 几何内核
# ---------------------------------------------------------------------------

def _inside_canonical(canonical: np.ndarray, shape: ShapeKind, tolerance: float = 0.0) -> np.ndarray:
    if shape is ShapeKind.ELLIPSOID:
        return np.sum(canonical * canonical, axis=-1) <= (0.5 + tolerance) ** 2
    return np.all(np.abs(canonical) <= 0.5 + tolerance, axis=-1)


def points_in_instance(points: np.ndarray, inst: LayoutInstance, tolerance: float = 0.0) -> np.ndarray:
    """批量点包含判断，points: (..., 3)；tolerance 为规范空间中的外扩量"""
    return _inside_canonical(inst.pose.to_canonical(points), inst.shape, tolerance)


def point_in_instance(p: Sequence[float], inst: LayoutInstance) -> bool:
    return bool(points_in_instance(np.asarray(p, dtype=np.float64)[None], inst)[0])


def _slab_intervals(o_c: np.ndarray, d_c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """规范立方体 [-1/2,1/2]^3 的 slab 测试，方向分量为0时按是否在板内处理"""
    zero = d_c == 0.0
    safe = np.where(zero, 1.0, d_c)
    t_a = (-0.5 - o_c) / safe
    t_b = (0.5 - o_c) / safe
    lo = np.minimum(t_a, t_b)
    hi = np.maximum(t_a, t_b)
    inside_slab = np.abs(o_c) <= 0.5
    lo = np.where(zero, np.where(inside_slab, -np.inf, np.inf), lo)
    hi = np.where(zero, np.where(inside_slab, np.inf, -np.inf), hi)
    return lo.max(axis=-1), hi.min(axis=-1)


def _ball_intervals(o_c: np.ndarray, d_c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """规范空间半径1/2球面的二次方程求根（数值稳定形式）"""
    a = np.sum(d_c * d_c, axis=-1)
    b = 2.0 * np.sum(o_c * d_c, axis=-1)
    c = np.sum(o_c * o_c, axis=-1) - 0.25
    disc = b * b - 4.0 * a * c
    miss = disc <= 0.0
    root = np.sqrt(np.where(miss, 0.0, disc))
    q = -0.5 * (b + np.where(b >= 0.0, root, -root))
    safe_q = np.where(q == 0.0, 1.0, q)
    r1 = q / a
    r2 = np.where(q != 0.0, c / safe_q, r1)
    t0 = np.minimum(r1, r2)
    t1 = np.maximum(r1, r2)
    t0 = np.where(miss, np.inf, t0)
    t1 = np.where(miss, -np.inf, t1)
    return t0, t1


def ray_intervals_batch(origins: np.ndarray, directions: np.ndarray,
                        inst: LayoutInstance) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    批量光线与单个实例求交

    所有基元均为凸体，每条光线至多一个区间。
    参数 t 与世界光线参数一致（规范变换是仿射的）。

    Returns:
        (t_near, t_far, hit)，相切 (t_near == t_far) 记为未命中
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    pose = inst.pose
    o_c = ((origins - pose.translation) @ pose.rotation) / pose.size
    d_c = (directions @ pose.rotation) / pose.size

    if inst.shape is ShapeKind.ELLIPSOID:
        t0, t1 = _ball_intervals(o_c, d_c)
    else:
        t0, t1 = _slab_intervals(o_c, d_c)
    hit = t1 > t0
    return t0, t1, hit


def ray_instance_intervals(origin: Sequence[float], direction: Sequence[float],
                           inst: LayoutInstance) -> List[Tuple[float, float]]:
    """单条光线的实例内部区间，未命中返回空列表"""
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise InvalidDirectionError("光线方向必须为单位向量", {"norm": float(np.linalg.norm(direction))})
    t0, t1, hit = ray_intervals_batch(np.asarray(origin, dtype=np.float64)[None], direction[None], inst)
    if not hit[0]:
        return []
    return [(float(t0[0]), float(t1[0]))]
