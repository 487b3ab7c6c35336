#!/usr/bin/env python3
"""
单目深度来源

桌面规模下用布局光栅化深度经隐藏的随机仿射变换并叠加噪声来模拟单目深度网络输出，
对齐环节与真实网络的处理方式完全一致。
"""
import zlib
from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np
import torch

from src.layout.primitives import SceneLayout
from src.raster.camera import Camera
from src.raster.rasterizer import rasterize


class MonoDepthProvider(ABC):
    """单目深度接口"""

    @abstractmethod
    def predict(self, image: torch.Tensor, cam: Camera) -> Tuple[torch.Tensor, torch.Tensor]:
        """返回 (深度 (H, W), 有效掩码 (H, W))，深度的尺度与偏移未知"""


class SyntheticMonoDepth(MonoDepthProvider):
    def __init__(self, layout: SceneLayout, seed: int = 0, noise_std: float = 0.01,
                 scale_range: Tuple[float, float] = (0.5, 2.0), shift_range: Tuple[float, float] = (-1.0, 1.0)):
        self.layout = layout
        self.noise_std = noise_std
        rng = np.random.default_rng(seed)
        self.scale = float(rng.uniform(*scale_range))
        self.shift = float(rng.uniform(*shift_range))
        self._seed = seed

    def predict(self, image: torch.Tensor, cam: Camera) -> Tuple[torch.Tensor, torch.Tensor]:
        maps = rasterize(self.layout, cam)
        rng = np.random.default_rng([self._seed, cam.width, cam.height,
                                     zlib.crc32(cam.pose.tobytes())])
        noise = rng.normal(0.0, self.noise_std, size=maps.depth.shape)
        depth = self.scale * maps.depth + self.shift + noise
        valid = ~maps.sky
        return torch.from_numpy(np.where(valid, depth, 0.0)), torch.from_numpy(valid)
