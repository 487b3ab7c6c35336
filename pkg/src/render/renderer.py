#!/usr/bin/env python3
"""
渲染器 g(θ, T)

按固定大小的光线块处理，每块使用由主种子拆分出的子种子，
结果与块的执行顺序无关。渲染过程只读场参数，不生成网格：
缺失的背景格子密度按0处理，生成请求由 collect_spawn_requests 预先收集。
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import torch

from src.common.helpers import split_seeds
from src.common.logger import get_logger
from src.field.scene_field import SceneField, Tile
from src.layout.primitives import SKY_CLASS_ID, SceneLayout
from src.raster.camera import Camera

from .compositor import CompositeResult, volume_composite
from .sampler import RaySampleSet, RenderConfig, sample_rays

logger = get_logger(__name__)

SEMANTIC_OPACITY_THRESHOLD = 0.5


@dataclass
class RenderFrame:
    """
    单帧渲染结果

    Attributes:
        color: (H, W, 3) torch，保留对场参数的梯度
        depth: (H, W) 期望终止距离
        opacity: (H, W) Σ T_i α_i
        semantic: (H, W) numpy 类别id
    """
    color: torch.Tensor
    depth: torch.Tensor
    opacity: torch.Tensor
    semantic: np.ndarray

    def image_chw(self) -> torch.Tensor:
        return self.color.permute(2, 0, 1)


def _chunks(count: int, size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + size, count)) for start in range(0, count, size)]


def composite(samples: RaySampleSet, field: SceneField, layout: SceneLayout) -> CompositeResult:
    """查询样本的 (σ, c) 并合成颜色、深度与不透明度"""
    sigma, rgb = field.query_samples(layout, samples.origins, samples.directions, samples.midpoints, samples.valid)
    dtype = sigma.dtype
    delta = torch.from_numpy(np.where(samples.valid, samples.delta, 0.0)).to(dtype)
    t = torch.from_numpy(samples.midpoints).to(dtype)
    background = field.sky_color(torch.from_numpy(samples.directions).to(dtype))
    return volume_composite(sigma, rgb, delta, t, background)


def semantic_from_weights(samples: RaySampleSet, weights: torch.Tensor, opacity: torch.Tensor,
                          layout: SceneLayout) -> np.ndarray:
    """逐类别累积权重取 argmax，不透明度低于0.5时为天空"""
    class_lookup = np.array([inst.class_id for inst in layout.instances] + [SKY_CLASS_ID], dtype=np.int64)
    classes = class_lookup[samples.owner]
    per_class = np.zeros((samples.ray_count, layout.class_count))
    rows = np.broadcast_to(np.arange(samples.ray_count)[:, None], classes.shape)
    np.add.at(per_class, (rows.reshape(-1), classes.reshape(-1)), weights.detach().cpu().numpy().reshape(-1))
    per_class[:, SKY_CLASS_ID] = -np.inf
    semantic = per_class.argmax(axis=1) if per_class.shape[1] > 1 else np.zeros(samples.ray_count, dtype=np.int64)
    return np.where(opacity.detach().cpu().numpy() < SEMANTIC_OPACITY_THRESHOLD, SKY_CLASS_ID, semantic)


def render_rays(field: SceneField, layout: SceneLayout, origins: np.ndarray, directions: np.ndarray,
                config: RenderConfig, seed: int = 0) -> Dict[str, object]:
    """
    逐块渲染一批光线

    Returns:
        {"color": (R, 3), "depth": (R,), "opacity": (R,), "semantic": (R,) numpy}
    """
    count = origins.shape[0]
    spans = _chunks(count, config.chunk_size)
    seeds = split_seeds(seed, len(spans))
    colors, depths, opacities, semantics = [], [], [], []
    for (start, end), chunk_seed in zip(spans, seeds):
        rng = np.random.default_rng(chunk_seed)
        samples = sample_rays(layout, origins[start:end], directions[start:end], config, rng)
        result = composite(samples, field, layout)
        colors.append(result.color)
        depths.append(result.depth)
        opacities.append(result.opacity)
        semantics.append(semantic_from_weights(samples, result.weights, result.opacity, layout))
    if not spans:
        empty = torch.zeros(0, dtype=field.dtype)
        return {"color": empty.reshape(0, 3), "depth": empty, "opacity": empty,
                "semantic": np.zeros(0, dtype=np.int64)}
    return {
        "color": torch.cat(colors),
        "depth": torch.cat(depths),
        "opacity": torch.cat(opacities),
        "semantic": np.concatenate(semantics),
    }


def render_image(field: SceneField, layout: SceneLayout, cam: Camera, config: RenderConfig,
                 seed: int = 0) -> RenderFrame:
    origins, directions = cam.generate_rays()
    out = render_rays(field, layout, origins, directions, config, seed)
    shape = (cam.height, cam.width)
    return RenderFrame(
        color=out["color"].reshape(*shape, 3),
        depth=out["depth"].reshape(shape),
        opacity=out["opacity"].reshape(shape),
        semantic=out["semantic"].reshape(shape),
    )


def stuff_tiles_for_samples(field: SceneField, layout: SceneLayout, samples: RaySampleSet) -> Set[Tile]:
    points = samples.positions[samples.valid]
    if points.shape[0] == 0:
        return set()
    return set(field.assign_points(layout, points).missing_tiles)


def collect_spawn_requests(field: SceneField, layout: SceneLayout, cameras: Iterable[Camera],
                           config: RenderConfig, seeds: Optional[Iterable[int]] = None) -> Set[Tile]:
    """
    生成网格前置遍历：用与渲染相同的采样（相同种子）找出缺失的背景格子

    seeds 与 cameras 一一对应，缺省时全部为0
    """
    cameras = list(cameras)
    seeds = list(seeds) if seeds is not None else [0] * len(cameras)
    requests: Set[Tile] = set()
    for cam, seed in zip(cameras, seeds):
        origins, directions = cam.generate_rays()
        spans = _chunks(origins.shape[0], config.chunk_size)
        for (start, end), chunk_seed in zip(spans, split_seeds(seed, len(spans))):
            rng = np.random.default_rng(chunk_seed)
            samples = sample_rays(layout, origins[start:end], directions[start:end], config, rng)
            requests |= stuff_tiles_for_samples(field, layout, samples)
    if requests:
        logger.debug(f"收集到 {len(requests)} 个背景格子生成请求")
    return requests
