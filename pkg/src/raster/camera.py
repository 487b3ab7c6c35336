#!/usr/bin/env python3
"""
针孔相机与轨迹文件

相机坐标系采用 OpenCV 约定（x右、y下、z前），世界系 z 轴向上，地面为 z=0。
像素中心位于 +0.5。
轨迹文件: JSON 列表，每项 {"fx","fy","cx","cy","width","height","pose":[16个数，行优先]}
"""
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.common.errors import LayoutParseError, LayoutValidationError
from src.common.helpers import atomic_write_text


@dataclass(frozen=True, eq=False)
class Camera:
    """
    相机 T

    Attributes:
        fx, fy, cx, cy: 内参（像素）
        width, height: 图像尺寸（像素）
        pose: 4x4 世界<-相机刚体变换
    """
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray

    def __post_init__(self):
        pose = np.array(self.pose, dtype=np.float64).reshape(4, 4)
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)
        if self.fx <= 0 or self.fy <= 0:
            raise LayoutValidationError("焦距必须为正", {"fx": self.fx, "fy": self.fy})
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise LayoutValidationError("主点必须位于图像内", {"cx": self.cx, "cy": self.cy})
        rotation = pose[:3, :3]
        if np.abs(rotation.T @ rotation - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(rotation) - 1) > 1e-6:
            raise LayoutValidationError("相机外参旋转部分不是旋转矩阵")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    @classmethod
    def look_at(cls, eye: Sequence[float], target: Sequence[float], width: int, height: int,
                fov_deg: float = 60.0, up: Sequence[float] = (0.0, 0.0, 1.0)) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        pose = np.eye(4)
        pose[:3, :3] = np.stack([right, down, forward], axis=1)
        pose[:3, 3] = eye
        focal = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
        return cls(focal, focal, width / 2.0, height / 2.0, width, height, pose)

    def resized(self, width: int, height: int) -> "Camera":
        """按新分辨率等比缩放内参"""
        sx, sy = width / self.width, height / self.height
        return replace(self, fx=self.fx * sx, fy=self.fy * sy, cx=self.cx * sx, cy=self.cy * sy,
                       width=width, height=height)

    def translated(self, offset: Sequence[float]) -> "Camera":
        pose = self.pose.copy()
        pose[:3, 3] = pose[:3, 3] + np.asarray(offset, dtype=np.float64)
        return replace(self, pose=pose)

    def yawed(self, degrees: float) -> "Camera":
        """绕世界z轴旋转朝向，位置不变"""
        pose = self.pose.copy()
        pose[:3, :3] = Rotation.from_euler("z", degrees, degrees=True).as_matrix() @ pose[:3, :3]
        return replace(self, pose=pose)

    def extrinsics_vector(self) -> np.ndarray:
        """展平的 3x4 外参（相机嵌入输入）"""
        return self.pose[:3, :].reshape(-1).copy()

    def generate_rays(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        每个像素中心一条光线

        Returns:
            origins (H*W, 3), directions (H*W, 3) 单位向量，行优先像素顺序
        """
        v, u = np.meshgrid(np.arange(self.height, dtype=np.float64),
                           np.arange(self.width, dtype=np.float64), indexing="ij")
        x = (u.reshape(-1) + 0.5 - self.cx) / self.fx
        y = (v.reshape(-1) + 0.5 - self.cy) / self.fy
        local = np.stack([x, y, np.ones_like(x)], axis=-1)
        local /= np.linalg.norm(local, axis=-1, keepdims=True)
        directions = local @ self.rotation.T
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.position, directions.shape).copy()
        return origins, directions

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "pose": self.pose.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, entry: dict) -> "Camera":
        try:
            return cls(float(entry["fx"]), float(entry["fy"]), float(entry["cx"]), float(entry["cy"]),
                       int(entry["width"]), int(entry["height"]), np.asarray(entry["pose"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as e:
            raise LayoutParseError("相机记录格式错误", {"error": str(e)}) from e


def load_trajectory(path: Union[str, Path]) -> List[Camera]:
    trajectory_file = Path(path)
    if not trajectory_file.exists():
        raise LayoutParseError(f"轨迹文件不存在: {trajectory_file}")
    try:
        records = json.loads(trajectory_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise LayoutParseError(f"轨迹文件JSON格式错误: {trajectory_file}") from e
    if not isinstance(records, list) or not records:
        raise LayoutParseError("轨迹文件必须是非空的相机列表")
    return [Camera.from_dict(entry) for entry in records]


def save_trajectory(cameras: Sequence[Camera], path: Union[str, Path]) -> Path:
    return atomic_write_text(path, json.dumps([cam.to_dict() for cam in cameras], indent=2))
