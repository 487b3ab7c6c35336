#!/usr/bin/env python3
"""
可扩展哈希网格场景表示 (Scalable Hash Grid)

- 背景(stuff)网格：世界按固定格子平铺，按需生成，轴对齐且互不重叠
- 物体(object)网格：与布局中 is_object 实例一一对应，携带位姿 (R, t, s)
- 天空模型：按光线方向输出颜色

并发约定：查询只读；生成网格与参数更新需要独占访问，
渲染过程中禁止生成网格（先收集生成请求，在两次渲染之间统一生成）。
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch
import torch.nn as nn

from src.common.errors import ConfigError, GridContractError, GridExistsError, UnknownInstanceError
from src.common.logger import get_logger
from src.layout.primitives import LayoutInstance, Pose, SceneLayout, points_in_instance

from .hash_grid import HashGridConfig, NeuralGrid
from .sky import MAX_SH_DEGREE, SkyModel

logger = get_logger(__name__)

Tile = Tuple[int, int, int]
ASSIGN_TOLERANCE = 1e-9  # 规范空间外扩，吸收区间端点的舍入误差


@dataclass
class FieldConfig:
    """场景场配置，格子尺寸单位为米"""
    hash_grid: HashGridConfig = field(default_factory=HashGridConfig)
    tile_size: Tuple[float, float, float] = (64.0, 64.0, 32.0)
    sky_degree: int = MAX_SH_DEGREE
    sky_hidden: int = 64
    seed: int = 0
    canonical_tolerance: float = 1e-6

    def __post_init__(self):
        if isinstance(self.hash_grid, dict):
            self.hash_grid = HashGridConfig(**self.hash_grid)
        self.tile_size = tuple(float(v) for v in self.tile_size)
        if len(self.tile_size) != 3 or any(v <= 0 for v in self.tile_size):
            raise ConfigError("tile_size 必须是三个正数", {"tile_size": self.tile_size})


class AssignmentKind(Enum):
    OBJECT = "object"
    STUFF = "stuff"
    SPAWN_REQUIRED = "spawn_required"


@dataclass(frozen=True)
class Assignment:
    """单点归属：物体网格、已有背景网格，或需要生成的背景格子"""
    kind: AssignmentKind
    key: Optional[str] = None
    tile: Optional[Tile] = None
    instance_id: Optional[int] = None


@dataclass
class GridAssignment:
    """
    批量归属结果

    Attributes:
        keys: 本批涉及的网格键（"obj:<id>" 或 "stuff:<i>_<j>_<k>"）
        index: (N,) 每个点对应 keys 的下标，-1 表示无网格
        tiles: (N, 3) 每个点所在格子
        missing_tiles: 需要生成的格子集合
    """
    keys: List[str]
    index: np.ndarray
    tiles: np.ndarray
    missing_tiles: Set[Tile]


def tile_key(tile: Sequence[int]) -> str:
    return "_".join(str(int(v)) for v in tile)


def parse_tile_key(key: str) -> Tile:
    i, j, k = (int(v) for v in key.split("_"))
    return (i, j, k)


class SceneField(nn.Module):
    """场景场 θ"""

    def __init__(self, config: Optional[FieldConfig] = None, layout: Optional[SceneLayout] = None):
        super().__init__()
        self.config = config or FieldConfig()
        self.stuff_grids = nn.ModuleDict()
        self.object_grids = nn.ModuleDict()
        self.sky = SkyModel(self.config.sky_degree, self.config.sky_hidden, self.config.seed)
        self._object_poses: Dict[int, Pose] = {}
        self._tile_size = np.asarray(self.config.tile_size, dtype=np.float64)
        if layout is not None:
            self.sync_objects(layout)

    @property
    def dtype(self) -> torch.dtype:
        return self.sky.mlp[0].weight.dtype

    # ------------------------------------------------------------------
    # 网格管理
    # ------------------------------------------------------------------
    def tile_of(self, points: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(points, dtype=np.float64) / self._tile_size).astype(np.int64)

    def tile_origin(self, tile: Sequence[int]) -> np.ndarray:
        return np.asarray(tile, dtype=np.float64) * self._tile_size

    def has_tile(self, tile: Sequence[int]) -> bool:
        return tile_key(tile) in self.stuff_grids

    def tiles(self) -> List[Tile]:
        return sorted(parse_tile_key(key) for key in self.stuff_grids.keys())

    def _new_grid(self, key: str) -> NeuralGrid:
        grid = NeuralGrid(self.config.hash_grid, self.config.seed, key, self.config.canonical_tolerance)
        return grid.to(self.dtype)

    def spawn_stuff_grid(self, tile: Sequence[int]) -> NeuralGrid:
        """在格子处生成新的背景网格，已有网格参数保持不变"""
        key = tile_key(tile)
        if key in self.stuff_grids:
            raise GridExistsError(f"背景网格已存在: {key}")
        grid = self._new_grid(f"stuff:{key}")
        self.stuff_grids[key] = grid
        logger.debug(f"生成背景网格 {key}")
        return grid

    def spawn_tiles(self, tiles: Iterable[Sequence[int]]) -> List[Tile]:
        spawned = []
        for tile in sorted({tuple(int(v) for v in t) for t in tiles}):
            if not self.has_tile(tile):
                self.spawn_stuff_grid(tile)
                spawned.append(tile)
        if spawned:
            logger.info(f"新增 {len(spawned)} 个背景网格，共 {len(self.stuff_grids)} 个")
        return spawned

    def add_object_grid(self, inst: LayoutInstance) -> NeuralGrid:
        return self.attach_object_grid(inst.id, inst.pose)

    def attach_object_grid(self, instance_id: int, pose: Pose) -> NeuralGrid:
        key = str(instance_id)
        if key in self.object_grids:
            raise GridExistsError(f"物体网格已存在: {instance_id}")
        grid = self._new_grid(f"object:{key}")
        self.object_grids[key] = grid
        self._object_poses[instance_id] = pose
        return grid

    def copy_object_grid(self, source_id: int, inst: LayoutInstance) -> NeuralGrid:
        """复制物体网格参数到新实例（重复物体编辑）"""
        grid = self.add_object_grid(inst)
        grid.load_state_dict(self.object_grids[str(source_id)].state_dict())
        return grid

    def remove_object_grid(self, instance_id: int) -> None:
        key = str(instance_id)
        if key not in self.object_grids:
            raise UnknownInstanceError(f"物体网格不存在: {instance_id}")
        del self.object_grids[key]
        del self._object_poses[instance_id]

    def object_pose(self, instance_id: int) -> Pose:
        if instance_id not in self._object_poses:
            raise UnknownInstanceError(f"物体网格不存在: {instance_id}")
        return self._object_poses[instance_id]

    def set_object_pose(self, instance_id: int, pose: Pose) -> None:
        if instance_id not in self._object_poses:
            raise UnknownInstanceError(f"物体网格不存在: {instance_id}")
        self._object_poses[instance_id] = pose

    def object_ids(self) -> List[int]:
        return sorted(self._object_poses)

    def sync_objects(self, layout: SceneLayout) -> None:
        """物体网格与布局对齐：新增缺失、删除多余、位姿以布局为准"""
        wanted = {inst.id: inst for inst in layout.object_instances()}
        for instance_id in [i for i in self._object_poses if i not in wanted]:
            self.remove_object_grid(instance_id)
        for instance_id, inst in wanted.items():
            if instance_id in self._object_poses:
                self._object_poses[instance_id] = inst.pose
            else:
                self.add_object_grid(inst)

    # ------------------------------------------------------------------
    # 归属判断
    # ------------------------------------------------------------------
    def assign_points(self, layout: SceneLayout, points: np.ndarray) -> GridAssignment:
        """
        物体优先：落在任一物体框内归属该物体（多个时取中心最近者），
        否则归属所在背景格子；格子不存在时记为需要生成
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        count = points.shape[0]
        objects = layout.object_instances()

        best_object = np.full(count, -1, dtype=np.int64)
        best_dist = np.full(count, np.inf)
        for slot, inst in enumerate(objects):
            if inst.id not in self._object_poses:
                raise GridContractError(f"物体实例 {inst.id} 没有对应的物体网格")
            inside = points_in_instance(points, inst, ASSIGN_TOLERANCE)
            dist = np.sum((points - inst.pose.translation) ** 2, axis=-1)
            better = inside & (dist < best_dist)
            best_object = np.where(better, slot, best_object)
            best_dist = np.where(better, dist, best_dist)

        tiles = self.tile_of(points)
        keys: List[str] = []
        key_slot: Dict[str, int] = {}
        index = np.full(count, -1, dtype=np.int64)
        missing: Set[Tile] = set()

        def slot_for(key: str) -> int:
            if key not in key_slot:
                key_slot[key] = len(keys)
                keys.append(key)
            return key_slot[key]

        for slot, inst in enumerate(objects):
            mask = best_object == slot
            if mask.any():
                index[mask] = slot_for(f"obj:{inst.id}")

        stuff = best_object < 0
        if stuff.any():
            unique_tiles, inverse = np.unique(tiles[stuff], axis=0, return_inverse=True)
            stuff_index = np.full(len(unique_tiles), -1, dtype=np.int64)
            for u, tile in enumerate(unique_tiles):
                tile = tuple(int(v) for v in tile)
                if self.has_tile(tile):
                    stuff_index[u] = slot_for(f"stuff:{tile_key(tile)}")
                else:
                    missing.add(tile)
            index[stuff] = stuff_index[inverse.reshape(-1)]
        return GridAssignment(keys, index, tiles, missing)

    def assign_point(self, layout: SceneLayout, p: Sequence[float]) -> Assignment:
        batch = self.assign_points(layout, np.asarray(p, dtype=np.float64)[None])
        tile = tuple(int(v) for v in batch.tiles[0])
        if batch.index[0] < 0:
            return Assignment(AssignmentKind.SPAWN_REQUIRED, tile=tile)
        key = batch.keys[batch.index[0]]
        if key.startswith("obj:"):
            return Assignment(AssignmentKind.OBJECT, key=key, instance_id=int(key[4:]))
        return Assignment(AssignmentKind.STUFF, key=key, tile=tile)

    # ------------------------------------------------------------------
    # 查询
    # ------------------------------------------------------------------
    def _grid_and_frame(self, key: str) -> Tuple[NeuralGrid, np.ndarray, Optional[Pose]]:
        """返回网格、锚点（背景为格子最小角，物体为中心）与物体位姿"""
        if key.startswith("obj:"):
            instance_id = int(key[4:])
            pose = self.object_pose(instance_id)
            return self.object_grids[str(instance_id)], pose.translation, pose
        tile_str = key[len("stuff:"):]
        return self.stuff_grids[tile_str], self.tile_origin(parse_tile_key(tile_str)), None

    def _canonical(self, relative: np.ndarray, pose: Optional[Pose]) -> np.ndarray:
        """锚点相对坐标 -> 网格规范空间 [0,1]^3"""
        if pose is None:
            return relative / self._tile_size
        return (relative @ pose.rotation) / pose.size + 0.5

    def _evaluate_groups(self, assignment: GridAssignment, relative_fn, count: int
                         ) -> Tuple[torch.Tensor, torch.Tensor]:
        dtype = self.dtype
        values_sigma, values_rgb, positions = [], [], []
        for slot, key in enumerate(assignment.keys):
            members = np.nonzero(assignment.index == slot)[0]
            grid, anchor, pose = self._grid_and_frame(key)
            canonical = self._canonical(relative_fn(members, anchor), pose)
            sigma, rgb = grid(torch.from_numpy(canonical))
            values_sigma.append(sigma)
            values_rgb.append(rgb)
            positions.append(torch.from_numpy(members))

        sigma_out = torch.zeros(count, dtype=dtype)
        rgb_out = torch.zeros(count, 3, dtype=dtype)
        if positions:
            where = torch.cat(positions)
            sigma_out = sigma_out.index_put((where,), torch.cat(values_sigma))
            rgb_out = rgb_out.index_put((where,), torch.cat(values_rgb))
        return sigma_out, rgb_out

    def query_points(self, layout: SceneLayout, points: np.ndarray,
                     inside_layout_only: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        世界点查询 (σ, c)；无网格的点密度为0

        inside_layout_only=True 时布局实例之外的点密度也置0（网格提取使用）
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        assignment = self.assign_points(layout, points)
        if inside_layout_only:
            inside = np.zeros(points.shape[0], dtype=bool)
            for inst in layout.instances:
                inside |= points_in_instance(points, inst)
            assignment.index = np.where(inside, assignment.index, -1)
        return self._evaluate_groups(assignment, lambda members, anchor: points[members] - anchor, points.shape[0])

    def query_samples(self, layout: SceneLayout, origins: np.ndarray, directions: np.ndarray,
                      t_values: np.ndarray, valid: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        光线样本查询

        相对坐标按 (origin - anchor) + t·d 计算。网格与相机同步平移 Δ 且 Δ 可被浮点精确表示（如 3.0、1.5）时算术完全一致；
        Δ 不可精确表示（如 0.1）时 origin + Δ 与 anchor + Δ 各自舍入，结果只在舍入误差内一致

        Args:
            origins, directions: (R, 3)
            t_values, valid: (R, N)

        Returns:
            sigma (R, N)，rgb (R, N, 3)；无效样本与无网格样本密度为0
        """
        rays, samples = t_values.shape
        ray_index = np.repeat(np.arange(rays), samples)
        flat_t = t_values.reshape(-1)
        flat_valid = valid.reshape(-1)
        points = origins[ray_index] + flat_t[:, None] * directions[ray_index]

        assignment = self.assign_points(layout, np.where(flat_valid[:, None], points, 0.0))
        assignment.index = np.where(flat_valid, assignment.index, -1)

        def relative(members, anchor):
            r = ray_index[members]
            return (origins[r] - anchor) + flat_t[members, None] * directions[r]

        sigma, rgb = self._evaluate_groups(assignment, relative, rays * samples)
        return sigma.reshape(rays, samples), rgb.reshape(rays, samples, 3)

    def query(self, layout: SceneLayout, p_world: Sequence[float], assignment: Assignment
              ) -> Tuple[torch.Tensor, torch.Tensor]:
        """单点查询，assignment 必须指向已有网格"""
        if assignment.kind is AssignmentKind.SPAWN_REQUIRED or assignment.key is None:
            raise GridContractError("查询点没有可用网格，需要先生成背景网格", {"tile": assignment.tile})
        grid, anchor, pose = self._grid_and_frame(assignment.key)
        relative = np.asarray(p_world, dtype=np.float64)[None] - anchor
        sigma, rgb = grid(torch.from_numpy(self._canonical(relative, pose)))
        return sigma[0], rgb[0]

    def sky_color(self, directions: torch.Tensor) -> torch.Tensor:
        return self.sky(directions)


# 模块级操作，与其他模块保持函数式调用风格
def assign_point(field: SceneField, layout: SceneLayout, p: Sequence[float]) -> Assignment:
    return field.assign_point(layout, p)


def spawn_stuff_grid(field: SceneField, tile: Sequence[int]) -> NeuralGrid:
    return field.spawn_stuff_grid(tile)


def encode(grid: NeuralGrid, p_canonical: torch.Tensor) -> torch.Tensor:
    return grid.encoding(grid.check_canonical(p_canonical))


def query(field: SceneField, layout: SceneLayout, p_world: Sequence[float], assignment: Assignment):
    return field.query(layout, p_world, assignment)


def sky_color(field: SceneField, d: Sequence[float]) -> torch.Tensor:
    direction = torch.as_tensor(np.asarray(d, dtype=np.float64)).reshape(1, 3)
    return field.sky_color(direction)[0]
