#!/usr/bin/env python3
"""
条件图光栅化
从布局渲染每个视角的语义图、深度图与天空掩码，并编码为去噪器的条件通道
"""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from src.common.errors import LayoutValidationError
from src.layout.primitives import SKY_CLASS_ID, SceneLayout, ray_intervals_batch

from .camera import Camera

DEFAULT_MAX_INVERSE_DEPTH = 0.5  # 1/米，最近可表示距离2米


@dataclass(frozen=True, eq=False)
class ConditionMaps:
    """
    条件图 L(T)

    Attributes:
        semantic: (H, W) 类别id，天空为0
        depth: (H, W) 最近命中距离（米），天空处为0哨兵值
        sky: (H, W) 天空掩码
    """
    semantic: np.ndarray
    depth: np.ndarray
    sky: np.ndarray

    def __post_init__(self):
        if not (self.semantic.shape == self.depth.shape == self.sky.shape):
            raise LayoutValidationError("条件图尺寸不一致")
        sky_by_class = self.semantic == SKY_CLASS_ID
        sky_by_depth = ~(self.depth > 0)
        if not (np.array_equal(self.sky, sky_by_class) and np.array_equal(self.sky, sky_by_depth)):
            raise LayoutValidationError("条件图违反天空一致性: sky <=> semantic==0 <=> 无有限深度")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.semantic.shape


def nearest_hits(layout: SceneLayout, origins: np.ndarray, directions: np.ndarray,
                 near: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    逐光线最近区间入口

    入口不在 near 之后的区间（相机位于实例内部或贴在表面上）不计，像素看到其后的下一个表面。

    Returns:
        (entry_t, instance_index)；未命中时 entry_t=inf、index=-1
    """
    best_t = np.full(origins.shape[0], np.inf)
    best_index = np.full(origins.shape[0], -1, dtype=np.int64)
    for index, inst in enumerate(layout.instances):
        t0, t1, hit = ray_intervals_batch(origins, directions, inst)
        valid = hit & (t0 > near)
        # 严格小于：并列时保留布局中靠前的实例
        better = valid & (t0 < best_t)
        best_t = np.where(better, t0, best_t)
        best_index = np.where(better, index, best_index)
    return best_t, best_index


def rasterize(layout: SceneLayout, cam: Camera, near: float = 0.0) -> ConditionMaps:
    origins, directions = cam.generate_rays()
    best_t, best_index = nearest_hits(layout, origins, directions, near)

    class_lookup = np.array([inst.class_id for inst in layout.instances] + [SKY_CLASS_ID], dtype=np.int64)
    semantic = class_lookup[best_index]  # -1 落到末尾的天空项
    hit = best_index >= 0
    depth = np.where(hit, best_t, 0.0)
    shape = (cam.height, cam.width)
    return ConditionMaps(semantic.reshape(shape), depth.reshape(shape), (~hit).reshape(shape))


def _resample(channels: torch.Tensor, target: Tuple[int, int]) -> torch.Tensor:
    if tuple(channels.shape[-2:]) == tuple(target):
        return channels
    return F.interpolate(channels[None], size=target, mode="area")[0]


def encode_condition(maps: ConditionMaps, class_count: int, target_res: Union[int, Tuple[int, int]],
                     max_inverse_depth: float = DEFAULT_MAX_INVERSE_DEPTH,
                     dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    条件编码 F：语义 one-hot（class_count 通道，面积平均）+ 归一化逆深度（1通道）

    Returns:
        (class_count + 1, H', W') 张量，数值有限且位于 [0, 1]
    """
    target = (target_res, target_res) if isinstance(target_res, int) else tuple(target_res)
    semantic = torch.as_tensor(maps.semantic, dtype=torch.int64)
    if int(semantic.max()) >= class_count:
        raise LayoutValidationError("语义图包含超出通道数的类别", {"class_count": class_count})

    one_hot = F.one_hot(semantic, class_count).permute(2, 0, 1).to(dtype)
    depth = torch.as_tensor(maps.depth, dtype=torch.float64)
    sky = torch.as_tensor(maps.sky)
    inverse = torch.where(sky, torch.zeros_like(depth), 1.0 / torch.where(sky, torch.ones_like(depth), depth))
    inverse = torch.clamp(inverse / max_inverse_depth, 0.0, 1.0).to(dtype)

    encoded = torch.cat([one_hot, inverse[None]], dim=0)
    return _resample(encoded, target)
