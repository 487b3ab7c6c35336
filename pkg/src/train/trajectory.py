#!/usr/bin/env python3
"""相机采样：在基础轨迹附近加入偏航与位置扰动"""
from typing import List, Optional, Sequence

import numpy as np

from src.common.errors import ConfigError
from src.raster.camera import Camera


class TrajectorySampler:
    """
    Args:
        cameras: 基础轨迹
        yaw_range_deg: 偏航扰动范围 ±yaw_range_deg（最大45°）
        position_jitter: 水平位置扰动（米）
        min_height: 相机高度下限（地面 z=0）
    """

    def __init__(self, cameras: Sequence[Camera], yaw_range_deg: float = 45.0,
                 position_jitter: float = 1.0, min_height: float = 0.5):
        if not cameras:
            raise ConfigError("相机轨迹不能为空")
        if not 0.0 <= yaw_range_deg <= 45.0:
            raise ConfigError("偏航扰动范围必须位于 [0, 45] 度", {"yaw_range_deg": yaw_range_deg})
        self.cameras = list(cameras)
        self.yaw_range_deg = yaw_range_deg
        self.position_jitter = position_jitter
        self.min_height = min_height

    def perturb(self, cam: Camera, rng: np.random.Generator) -> Camera:
        yaw = rng.uniform(-self.yaw_range_deg, self.yaw_range_deg)
        offset = rng.uniform(-self.position_jitter, self.position_jitter, size=3)
        offset[2] *= 0.25
        moved = cam.yawed(yaw).translated(offset)
        height = moved.position[2]
        if height < self.min_height:
            moved = moved.translated([0.0, 0.0, self.min_height - height])
        return moved

    def sample(self, rng: np.random.Generator, resolution: Optional[int] = None) -> Camera:
        cam = self.perturb(self.cameras[int(rng.integers(len(self.cameras)))], rng)
        return cam.resized(resolution, resolution) if resolution else cam

    def held_out(self, count: int, seed: int, resolution: Optional[int] = None) -> List[Camera]:
        """固定种子的评估视角，与训练采样流相互独立"""
        rng = np.random.default_rng([seed, 7919])
        return [self.sample(rng, resolution) for _ in range(count)]
