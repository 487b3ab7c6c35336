#!/usr/bin/env python3
"""
合成画师：条件图 × 风格 -> RGB 图像

定义桌面规模的目标图像分布：类别基色、随深度衰减的明暗、按类别播种的程序纹理，
再按风格（白天/夜晚/雪天）调制。给定 (条件图, 风格, 种子) 输出确定。
"""
from typing import Dict, Tuple

import numpy as np

from src.common.errors import ConfigError
from src.raster.rasterizer import ConditionMaps

SKY_COLORS = {
    0: (0.55, 0.72, 0.92),
    1: (0.04, 0.05, 0.14),
    2: (0.80, 0.83, 0.88),
}
DEPTH_FALLOFF = 60.0
TEXTURE_AMPLITUDE = 0.04


class PainterOracle:
    def __init__(self, palette: Dict[int, Tuple[int, int, int]], seed: int = 0):
        self.palette = {int(k): np.asarray(v, dtype=np.float64) / 255.0 for k, v in palette.items()}
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._texture = {
            class_id: (rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * np.pi))
            for class_id in sorted(self.palette)
        }

    def base_colors(self, semantic: np.ndarray) -> np.ndarray:
        colors = np.zeros(semantic.shape + (3,))
        for class_id, color in self.palette.items():
            colors[semantic == class_id] = color
        return colors

    def paint(self, maps: ConditionMaps, style: int = 0) -> np.ndarray:
        """返回 (H, W, 3)，取值 [0, 1]"""
        if style not in SKY_COLORS:
            raise ConfigError("未知风格token", {"style": style, "allowed": sorted(SKY_COLORS)})
        semantic = maps.semantic
        depth = maps.depth
        color = self.base_colors(semantic)

        shading = 0.55 + 0.45 * np.exp(-depth / DEPTH_FALLOFF)
        frequency = np.zeros(semantic.shape)
        phase = np.zeros(semantic.shape)
        for class_id, (freq, ph) in self._texture.items():
            mask = semantic == class_id
            frequency[mask] = freq
            phase[mask] = ph
        texture = TEXTURE_AMPLITUDE * np.sin(frequency * depth + phase)
        color = color * shading[..., None] + texture[..., None]

        if style == 1:
            color = color * 0.35 + np.array([0.0, 0.02, 0.08])
        elif style == 2:
            color = 0.55 * color + 0.45 * np.array([0.95, 0.96, 0.98])

        color = np.where(maps.sky[..., None], np.asarray(SKY_COLORS[style]), color)
        return np.clip(color, 0.0, 1.0)
