#!/usr/bin/env python3
"""
布局约束光线采样

光线与全部布局实例求交，区间裁剪到 [near, far] 后合并，
再按区间总长度做分层抖动采样。每个样本代表一段 [t_i, t_i + δ_i]，
δ_i 取到下一个样本或所在合并区间终点的距离，场在段中点处查询。
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.common.errors import ConfigError, InvalidDirectionError
from src.layout.primitives import SceneLayout, points_in_instance, ray_intervals_batch

CONTAINMENT_TOLERANCE = 1e-9


@dataclass
class RenderConfig:
    """渲染采样配置，距离单位为米"""
    samples_per_ray: int = 64
    near: float = 0.0
    far: float = 400.0
    layout_constraint: bool = True
    chunk_size: int = 4096
    jitter: bool = True

    def __post_init__(self):
        if self.samples_per_ray < 1:
            raise ConfigError("samples_per_ray 必须 >= 1", {"samples_per_ray": self.samples_per_ray})
        if not (0.0 <= self.near < self.far < np.inf):
            raise ConfigError("需要 0 <= near < far 且 far 有限", {"near": self.near, "far": self.far})
        if self.chunk_size < 1:
            raise ConfigError("chunk_size 必须 >= 1", {"chunk_size": self.chunk_size})


@dataclass
class RaySampleSet:
    """
    一批光线的样本集合（按光线参数升序）

    Attributes:
        origins, directions: (R, 3)
        t: (R, N) 段起点
        delta: (R, N) 段长 δ_i（米）
        valid: (R, N) 样本有效标记，无任何区间的光线全部无效
        owner: (R, N) 段中点所在实例在 layout.instances 中的下标，-1 表示不在任何实例内
        interval_start, interval_end: (R, K) 合并后的区间，按起点升序，无效项为 nan
    """
    origins: np.ndarray
    directions: np.ndarray
    t: np.ndarray
    delta: np.ndarray
    valid: np.ndarray
    owner: np.ndarray
    interval_start: np.ndarray
    interval_end: np.ndarray

    @property
    def ray_count(self) -> int:
        return self.t.shape[0]

    @property
    def midpoints(self) -> np.ndarray:
        return self.t + 0.5 * self.delta

    @property
    def positions(self) -> np.ndarray:
        """(R, N, 3) 段中点世界坐标"""
        return self.origins[:, None, :] + self.midpoints[..., None] * self.directions[:, None, :]

    def intervals(self, ray: int):
        """单条光线的合并区间列表"""
        mask = ~np.isnan(self.interval_start[ray])
        return list(zip(self.interval_start[ray][mask].tolist(), self.interval_end[ray][mask].tolist()))

    def sample_count(self) -> int:
        return int(self.valid.sum())


def _merge_intervals(t0: np.ndarray, t1: np.ndarray, valid: np.ndarray):
    """
    区间并集（逐光线向量化）

    Returns:
        piece_start, piece_end: (R, K) 互不相交的片段，按起点排序，空片段长度为0
        order: (R, K) 排序位置对应的实例下标（片段来源）
        group_end: (R, K) 片段所在合并区间的终点
        merged_start, merged_end: (R, K) 合并区间（无效为 nan）
    """
    rays, count = t0.shape
    start = np.where(valid, t0, np.inf)
    end = np.where(valid, t1, -np.inf)
    order = np.argsort(start, axis=1, kind="stable")
    start = np.take_along_axis(start, order, axis=1)
    end = np.take_along_axis(end, order, axis=1)
    valid_sorted = np.take_along_axis(valid, order, axis=1)

    inclusive_max = np.maximum.accumulate(end, axis=1)
    previous_end = np.concatenate([np.full((rays, 1), -np.inf), inclusive_max[:, :-1]], axis=1)
    piece_start = np.where(valid_sorted, np.maximum(start, previous_end), 0.0)
    piece_end = np.where(valid_sorted, np.maximum(end, piece_start), 0.0)

    new_group = valid_sorted & (start > previous_end)
    group = np.cumsum(new_group, axis=1) - 1
    flat_group = np.where(valid_sorted, np.arange(rays)[:, None] * count + np.maximum(group, 0), -1)

    group_max = np.full(rays * count, -np.inf)
    group_min = np.full(rays * count, np.inf)
    members = flat_group >= 0
    np.maximum.at(group_max, flat_group[members], end[members])
    np.minimum.at(group_min, flat_group[members], start[members])
    group_end = np.where(members, group_max[np.maximum(flat_group, 0)], 0.0)

    merged_start = np.where(new_group, group_min[np.maximum(flat_group, 0)], np.nan)
    merged_end = np.where(new_group, group_max[np.maximum(flat_group, 0)], np.nan)
    order_merged = np.argsort(np.isnan(merged_start), axis=1, kind="stable")
    merged_start = np.take_along_axis(merged_start, order_merged, axis=1)
    merged_end = np.take_along_axis(merged_end, order_merged, axis=1)
    return piece_start, piece_end, order, group_end, merged_start, merged_end


def _stratified(lengths: np.ndarray, samples: int, rng: Optional[np.random.Generator], jitter: bool) -> np.ndarray:
    """在 [0, total) 上分层抖动取点，返回 (R, N) 累计长度坐标"""
    rays = lengths.shape[0]
    total = lengths.sum(axis=1)
    offsets = rng.random((rays, samples)) if (jitter and rng is not None) else np.full((rays, samples), 0.5)
    return (np.arange(samples)[None, :] + offsets) / samples * total[:, None]


def _locate(u: np.ndarray, piece_start: np.ndarray, lengths: np.ndarray):
    """累计长度坐标 -> (片段下标, 光线参数 t)"""
    cumulative = np.cumsum(lengths, axis=1)
    last = np.where(lengths > 0, np.arange(lengths.shape[1])[None, :], -1).max(axis=1)
    index = (cumulative[:, None, :] <= u[:, :, None]).sum(axis=-1)
    index = np.minimum(index, np.maximum(last, 0)[:, None])
    before = np.take_along_axis(cumulative - lengths, index, axis=1)
    start = np.take_along_axis(piece_start, index, axis=1)
    length = np.take_along_axis(lengths, index, axis=1)
    t = start + np.clip(u - before, 0.0, length)
    return index, t


def _owner_by_containment(layout: SceneLayout, points: np.ndarray) -> np.ndarray:
    """物体优先，其次按布局顺序靠前者"""
    owner = np.full(points.shape[:-1], -1, dtype=np.int64)
    priority = sorted(range(len(layout.instances)), key=lambda i: (not layout.instances[i].is_object, i))
    for index in reversed(priority):
        inside = points_in_instance(points, layout.instances[index], CONTAINMENT_TOLERANCE)
        owner = np.where(inside, index, owner)
    return owner


def sample_rays(layout: SceneLayout, origins: np.ndarray, directions: np.ndarray, config: RenderConfig,
                rng: Optional[np.random.Generator] = None) -> RaySampleSet:
    """批量光线采样；config.layout_constraint=False 时退化为 [near, far] 全空间采样"""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    rays = origins.shape[0]
    samples = config.samples_per_ray

    if config.layout_constraint and layout.instances:
        bounds = [ray_intervals_batch(origins, directions, inst) for inst in layout.instances]
        t0 = np.stack([np.maximum(b[0], config.near) for b in bounds], axis=1)
        t1 = np.stack([np.minimum(b[1], config.far) for b in bounds], axis=1)
        hit = np.stack([b[2] for b in bounds], axis=1) & (t1 > t0)
    elif config.layout_constraint:
        t0 = np.zeros((rays, 1))
        t1 = np.zeros((rays, 1))
        hit = np.zeros((rays, 1), dtype=bool)
    else:
        t0 = np.full((rays, 1), config.near)
        t1 = np.full((rays, 1), config.far)
        hit = np.ones((rays, 1), dtype=bool)

    piece_start, piece_end, order, group_end, merged_start, merged_end = _merge_intervals(t0, t1, hit)
    lengths = piece_end - piece_start
    u = _stratified(lengths, samples, rng, config.jitter)
    index, t = _locate(u, piece_start, lengths)

    ray_valid = lengths.sum(axis=1) > 0
    valid = np.broadcast_to(ray_valid[:, None], t.shape).copy()
    t = np.where(valid, t, 0.0)

    end_of_group = np.take_along_axis(group_end, index, axis=1)
    following = np.concatenate([t[:, 1:], np.full((rays, 1), np.inf)], axis=1)
    delta = np.where(valid, np.minimum(following, end_of_group) - t, 0.0)
    delta = np.maximum(delta, 0.0)

    mid = t + 0.5 * delta
    points = origins[:, None, :] + mid[..., None] * directions[:, None, :]
    if config.layout_constraint and layout.instances:
        owner = _owner_by_containment(layout, points)
        # 中点因舍入落在所有实例之外时退回片段来源实例
        source = np.take_along_axis(order, index, axis=1)
        owner = np.where(owner >= 0, owner, source)
    else:
        owner = _owner_by_containment(layout, points)
    owner = np.where(valid, owner, -1)
    return RaySampleSet(origins, directions, t, delta, valid, owner, merged_start, merged_end)


def sample_ray(layout: SceneLayout, origin: Sequence[float], direction: Sequence[float], samples_per_ray: int,
               near: float, far: float, rng: Optional[np.random.Generator] = None,
               layout_constraint: bool = True) -> RaySampleSet:
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise InvalidDirectionError("光线方向必须为单位向量", {"norm": float(np.linalg.norm(direction))})
    config = RenderConfig(samples_per_ray=samples_per_ray, near=near, far=far, layout_constraint=layout_constraint)
    return sample_rays(layout, np.asarray(origin, dtype=np.float64)[None], direction[None], config, rng)
