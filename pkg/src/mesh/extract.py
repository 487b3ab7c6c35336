#!/usr/bin/env python3
"""
三维网格提取

在区域包围盒内按体素尺寸采样密度（布局实例外密度为0），以 marching cubes
提取等值面并按查询颜色着色，导出为带顶点颜色的 OBJ。
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import trimesh
from skimage import measure

from src.common.errors import ConfigError
from src.common.helpers import atomic_write_text
from src.common.logger import get_logger
from src.field.scene_field import SceneField
from src.layout.primitives import SceneLayout

logger = get_logger(__name__)

DEGENERATE_AREA = 1e-12
QUERY_CHUNK = 65536

Region = Tuple[Sequence[float], Sequence[float]]
# points (N, 3) -> (sigma (N,), rgb (N, 3) 或 None)
DensityFn = Callable[[np.ndarray], Tuple[np.ndarray, Optional[np.ndarray]]]


@dataclass
class TriangleMesh:
    """
    Attributes:
        vertices: (V, 3) 米
        triangles: (F, 3) 顶点索引
        colors: (V, 3) [0, 1]，可选
    """
    vertices: np.ndarray
    triangles: np.ndarray
    colors: Optional[np.ndarray] = None

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), None)

    @property
    def is_empty(self) -> bool:
        return self.triangles.shape[0] == 0

    def to_trimesh(self) -> trimesh.Trimesh:
        vertex_colors = None
        if self.colors is not None:
            vertex_colors = np.clip(np.round(self.colors * 255.0), 0, 255).astype(np.uint8)
        return trimesh.Trimesh(vertices=self.vertices, faces=self.triangles, vertex_colors=vertex_colors,
                               process=False)


@dataclass
class DensityVolume:
    """格点密度：values[i, j, k] 位于 origin + (i, j, k)·voxel_size"""
    values: np.ndarray
    origin: np.ndarray
    voxel_size: float

    def count_above(self, threshold: float) -> int:
        return int((self.values > threshold).sum())


def default_region(layout: SceneLayout) -> Tuple[np.ndarray, np.ndarray]:
    """布局全部实例包围盒的并集"""
    if not layout.instances:
        raise ConfigError("布局为空，无法确定网格提取区域")
    corners = np.array([[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])
    points = np.concatenate([(corners * inst.pose.size) @ inst.pose.rotation.T + inst.pose.translation
                             for inst in layout.instances])
    return points.min(axis=0), points.max(axis=0)


def field_density_fn(field: SceneField, layout: SceneLayout, chunk: int = QUERY_CHUNK) -> DensityFn:
    def density(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sigmas, colors = [], []
        with torch.no_grad():
            for start in range(0, points.shape[0], chunk):
                sigma, rgb = field.query_points(layout, points[start:start + chunk], inside_layout_only=True)
                sigmas.append(sigma.double().cpu().numpy())
                colors.append(rgb.double().cpu().numpy())
        if not sigmas:
            return np.zeros(0), np.zeros((0, 3))
        return np.concatenate(sigmas), np.concatenate(colors)
    return density


def sample_density(density_fn: DensityFn, region: Region, voxel_size: float) -> DensityVolume:
    if voxel_size <= 0:
        raise ConfigError("voxel_size 必须为正", {"voxel_size": voxel_size})
    lo = np.asarray(region[0], dtype=np.float64)
    hi = np.asarray(region[1], dtype=np.float64)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(hi <= lo):
        raise ConfigError("提取区域必须有限且 min < max", {"min": lo.tolist(), "max": hi.tolist()})
    counts = np.ceil((hi - lo) / voxel_size).astype(np.int64) + 1
    axes = [lo[i] + np.arange(counts[i]) * voxel_size for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    sigma, _ = density_fn(grid)
    return DensityVolume(np.asarray(sigma, dtype=np.float64).reshape(tuple(counts)), lo, voxel_size)


def _drop_degenerate(vertices: np.ndarray, triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    triangles = triangles[area > DEGENERATE_AREA]
    used, remap = np.unique(triangles.reshape(-1), return_inverse=True)
    return vertices[used], remap.reshape(-1, 3).astype(np.int64)


def mesh_from_volume(volume: DensityVolume, threshold: float,
                     color_fn: Optional[DensityFn] = None) -> TriangleMesh:
    """体素外围补一圈0密度，保证表面在区域边界处闭合"""
    values = np.pad(volume.values, 1, mode="constant", constant_values=0.0)
    origin = volume.origin - volume.voxel_size
    if not values.max() > threshold or not values.min() < threshold:
        return TriangleMesh.empty()
    verts, faces, _, _ = measure.marching_cubes(values, level=threshold, spacing=(volume.voxel_size,) * 3,
                                                allow_degenerate=False)
    vertices = verts.astype(np.float64) + origin
    vertices, triangles = _drop_degenerate(vertices, faces.astype(np.int64))
    if triangles.shape[0] == 0:
        return TriangleMesh.empty()
    colors = None
    if color_fn is not None:
        _, rgb = color_fn(vertices)
        colors = None if rgb is None else np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    return TriangleMesh(vertices, triangles, colors)


def extract_mesh(field: Optional[SceneField], layout: SceneLayout, region: Optional[Region] = None,
                 voxel_size: float = 0.5, threshold: float = 1.6931471805599454,
                 density_fn: Optional[DensityFn] = None) -> TriangleMesh:
    """
    Args:
        region: (min, max)，缺省为布局包围盒
        density_fn: 注入的密度函数，缺省查询场（布局外密度为0）

    Returns:
        没有任何表面时返回空网格
    """
    density_fn = density_fn or field_density_fn(field, layout)
    region = region if region is not None else default_region(layout)
    volume = sample_density(density_fn, region, voxel_size)
    mesh = mesh_from_volume(volume, threshold, density_fn)
    logger.info(f"网格提取: 体素 {volume.values.shape}，{mesh.vertices.shape[0]} 个顶点，"
                f"{mesh.triangles.shape[0]} 个三角形")
    return mesh


def save_obj(mesh: TriangleMesh, path: Union[str, Path]) -> Path:
    """ASCII OBJ：v（可带颜色）+ f，不写法线与纹理"""
    if mesh.is_empty:
        return atomic_write_text(path, "# empty mesh\n")
    text = mesh.to_trimesh().export(file_type="obj", include_normals=False, include_texture=False,
                                   include_color=mesh.colors is not None)
    return atomic_write_text(path, text)
