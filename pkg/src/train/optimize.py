#!/usr/bin/env python3
"""
场景优化循环

粗阶段（optimize_scene）：LG-VSD 分数蒸馏 + 特征一致性 + 单目深度 + 天空损失，
与适配器更新 1:1 交替；细阶段（refine_scene）：布局感知的重采样细化。
每一步的相机、渲染种子与噪声都由 (seed, 阶段, 步号) 派生，给定种子结果确定。
"""
import csv
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from tqdm import tqdm

from src.common.errors import DepthAlignmentError, TrainingDivergedError
from src.common.helpers import make_generator
from src.common.logger import get_logger
from src.field.checkpoint import save_field
from src.field.scene_field import SceneField, tile_key
from src.guidance.adapter import AdaptedDenoiser, adapter_step, make_adapter_optimizer
from src.guidance.denoiser import ToyDenoiser
from src.guidance.distillation import DistillationResult, distillation_surrogate, lg_vsd_terms, sds_terms
from src.guidance.refinement import RefineMode, from_diffusion_space, resample_refine, to_diffusion_space
from src.guidance.schedule import NoiseSchedule
from src.layout.primitives import SceneLayout
from src.losses.mono_depth import MonoDepthProvider, SyntheticMonoDepth
from src.losses.objectives import (FeatureEncoder, depth_loss, feature_consistency_loss, refine_mse,
                                   sky_loss)
from src.raster.camera import Camera
from src.raster.rasterizer import ConditionMaps, encode_condition, rasterize
from src.render.renderer import RenderFrame, collect_spawn_requests, render_image
from src.render.sampler import RenderConfig

from .config import RunConfig
from .painter import PainterOracle
from .trajectory import TrajectorySampler

logger = get_logger(__name__)

PHASES = {"optimize": 0, "refine": 1, "edit": 2}
METRIC_FIELDS = ("step", "phase", "total", "guidance", "feature", "depth", "sky", "refine", "adapter",
                 "spawned", "painter_distance")


@dataclass
class GuidanceStack:
    """
    引导相关的全部组件

    Attributes:
        base: 预训练去噪器 ε_p（冻结）
        adapted: LoRA 适配去噪器 ε_φ
        adapter_optimizer: 适配器优化器，秩为0时为 None
        encoder: 特征一致性损失使用的固定编码器
        mono: 单目深度来源，None 时跳过深度损失
    """
    base: ToyDenoiser
    adapted: AdaptedDenoiser
    schedule: NoiseSchedule
    encoder: FeatureEncoder
    mono: Optional[MonoDepthProvider] = None
    adapter_optimizer: Optional[torch.optim.Optimizer] = None

    @classmethod
    def build(cls, base: ToyDenoiser, schedule: NoiseSchedule, run_config: RunConfig,
              layout: Optional[SceneLayout] = None) -> "GuidanceStack":
        adapted = AdaptedDenoiser(base, run_config.adapter)
        mono = None
        if layout is not None:
            mono = SyntheticMonoDepth(layout, seed=run_config.train.seed, noise_std=run_config.train.mono_noise)
        return cls(base, adapted, schedule, FeatureEncoder(seed=run_config.train.seed), mono,
                   make_adapter_optimizer(adapted))

    def with_layout(self, layout: SceneLayout, run_config: RunConfig) -> "GuidanceStack":
        """布局编辑后替换单目深度来源，其余组件共享"""
        mono = SyntheticMonoDepth(layout, seed=run_config.train.seed, noise_std=run_config.train.mono_noise)
        return GuidanceStack(self.base, self.adapted, self.schedule, self.encoder, mono, self.adapter_optimizer)


@dataclass
class TrainResult:
    field: SceneField
    steps: int
    history: List[Dict[str, float]] = dataclass_field(default_factory=list)
    painter_distance: Optional[float] = None


class MetricsLog:
    """只追加的 CSV 指标日志"""

    def __init__(self, path: Union[str, Path, None]):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, row: Dict[str, object]) -> None:
        if self.path is None:
            return
        new_file = not self.path.exists()
        with open(self.path, "a", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS, extrasaction="ignore")
            if new_file:
                writer.writeheader()
            writer.writerow({key: row.get(key, "") for key in METRIC_FIELDS})


# ----------------------------------------------------------------------
# 评估
# ----------------------------------------------------------------------
def evaluate_painter_distance(field: SceneField, layout: SceneLayout, cameras: Sequence[Camera],
                              painter: PainterOracle, style: int, render_cfg: RenderConfig,
                              seed: int = 0) -> float:
    """mean |render - painter(rasterize(layout, T))|，对所有像素与相机取平均"""
    distances = []
    with torch.no_grad():
        for index, cam in enumerate(cameras):
            frame = render_image(field, layout, cam, render_cfg, seed + index)
            target = painter.paint(rasterize(layout, cam, render_cfg.near), style)
            distances.append(float(np.abs(frame.color.cpu().numpy() - target).mean()))
    return float(np.mean(distances)) if distances else 0.0


def semantic_agreement(field: SceneField, layout: SceneLayout, cameras: Sequence[Camera],
                       render_cfg: RenderConfig, seed: int = 0) -> float:
    """光栅化非天空像素中，渲染语义与光栅化语义一致的比例"""
    matched, total = 0, 0
    with torch.no_grad():
        for index, cam in enumerate(cameras):
            maps = rasterize(layout, cam, render_cfg.near)
            frame = render_image(field, layout, cam, render_cfg, seed + index)
            mask = ~maps.sky
            matched += int((frame.semantic[mask] == maps.semantic[mask]).sum())
            total += int(mask.sum())
    return matched / total if total else 1.0


# ----------------------------------------------------------------------
# 训练器
# ----------------------------------------------------------------------
class SceneTrainer:
    """
    场参数的单线程训练器

    负责按步派生随机源、生成缺失背景网格并注册到优化器、数值保护与指标记录。
    """

    def __init__(self, field: SceneField, layout: SceneLayout, stack: GuidanceStack, run_config: RunConfig,
                 sampler: TrajectorySampler, style: Optional[int] = None,
                 metrics_path: Union[str, Path, None] = None,
                 checkpoint_path: Union[str, Path, None] = None,
                 painter: Optional[PainterOracle] = None,
                 eval_cameras: Optional[Sequence[Camera]] = None):
        self.field = field
        self.layout = layout
        self.stack = stack
        self.run_config = run_config
        self.cfg = run_config.train
        self.sampler = sampler
        self.style = self.cfg.style if style is None else style
        self.metrics = MetricsLog(metrics_path)
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path is not None else None
        self.painter = painter
        self.eval_cameras = list(eval_cameras) if eval_cameras is not None else []
        self.field.sync_objects(layout)
        self.optimizer = torch.optim.AdamW(self.field.parameters(), lr=self.cfg.lr,
                                           weight_decay=self.cfg.weight_decay)

    # ------------------------------------------------------------------
    def _step_rng(self, phase: str, step: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, PHASES[phase], step])

    def _spawn_for(self, cam: Camera, render_seed: int) -> int:
        """前置遍历：生成本步渲染需要的背景网格并加入优化器"""
        requests = collect_spawn_requests(self.field, self.layout, [cam], self.run_config.render, [render_seed])
        spawned = self.field.spawn_tiles(requests)
        for tile in spawned:
            params = list(self.field.stuff_grids[tile_key(tile)].parameters())
            self.optimizer.add_param_group({"params": params})
        return len(spawned)

    def _snapshot(self) -> Dict[str, torch.Tensor]:
        return {key: value.detach().clone() for key, value in self.field.state_dict().items()}

    def _restore(self, snapshot: Dict[str, torch.Tensor]) -> None:
        current = self.field.state_dict()
        with torch.no_grad():
            for key, value in snapshot.items():
                if key in current:
                    current[key].copy_(value)

    def _diverged(self, snapshot: Dict[str, torch.Tensor], step: int, phase: str, terms: Dict[str, float]) -> None:
        self._restore(snapshot)
        if self.checkpoint_path is not None:
            save_field(self.field, self.checkpoint_path)
        logger.error(f"{phase} 第 {step} 步出现非有限值，已恢复上一步参数: {terms}")
        raise TrainingDivergedError(f"{phase} 阶段训练发散", {"step": step, "phase": phase, "losses": terms})

    def _parameters_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.field.parameters())

    def _condition(self, maps: ConditionMaps, resolution: int) -> torch.Tensor:
        return encode_condition(maps, self.layout.class_count, resolution)

    def _depth_and_sky(self, frame: RenderFrame, maps: ConditionMaps, cam: Camera,
                       losses: Dict[str, torch.Tensor]) -> None:
        if self.cfg.depth_weight > 0 and self.stack.mono is not None:
            mono, valid = self.stack.mono.predict(frame.image_chw().detach(), cam)
            mask = valid & ~torch.from_numpy(maps.sky)
            try:
                losses["depth"] = self.cfg.depth_weight * depth_loss(mono, frame.depth, mask)
            except DepthAlignmentError as e:
                logger.debug(f"跳过深度损失: {e}")
        if self.cfg.sky_weight > 0:
            losses["sky"] = self.cfg.sky_weight * sky_loss(frame.opacity, torch.from_numpy(maps.sky))

    def _guidance_terms(self, x0: torch.Tensor, condition: torch.Tensor, cam: Camera,
                        gen: torch.Generator) -> DistillationResult:
        stack = self.stack
        if self.cfg.guidance == "sds":
            return sds_terms(x0, stack.base, stack.schedule, condition, self.style, gen)
        layout_condition = condition if self.cfg.guidance == "lg_vsd" else None
        return lg_vsd_terms(x0, stack.base, stack.adapted, stack.schedule, layout_condition, cam, self.style, gen)

    def _apply(self, losses: Dict[str, torch.Tensor], snapshot: Dict[str, torch.Tensor],
               step: int, phase: str) -> Dict[str, float]:
        values = {name: float(value.detach()) for name, value in losses.items()}
        total = sum(losses.values())
        values["total"] = float(total.detach())
        if not np.isfinite(values["total"]):
            self._diverged(snapshot, step, phase, values)
        self.optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.field.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        if not self._parameters_finite():
            self._diverged(snapshot, step, phase, values)
        return values

    def _record(self, step: int, phase: str, values: Dict[str, float], log_every_end: int) -> None:
        row: Dict[str, object] = {"step": step, "phase": phase, **values}
        if self.cfg.eval_every and self.painter is not None and self.eval_cameras \
                and (step + 1) % self.cfg.eval_every == 0:
            row["painter_distance"] = evaluate_painter_distance(
                self.field, self.layout, self.eval_cameras, self.painter, self.style, self.run_config.render)
        self.metrics.append(row)
        if self.cfg.log_every and (step % self.cfg.log_every == 0 or step == log_every_end):
            summary = ", ".join(f"{k}={v:.4f}" for k, v in values.items() if isinstance(v, float))
            logger.info(f"{phase} step {step}: {summary}")
        if self.cfg.checkpoint_every and self.checkpoint_path is not None \
                and (step + 1) % self.cfg.checkpoint_every == 0:
            save_field(self.field, self.checkpoint_path)

    # ------------------------------------------------------------------
    def optimize_step(self, step: int, phase: str = "optimize") -> Dict[str, float]:
        cfg = self.cfg
        rng = self._step_rng(phase, step)
        cam = self.sampler.sample(rng, cfg.coarse_resolution)
        render_seed = int(rng.integers(2 ** 31))
        gen = make_generator(render_seed)

        snapshot = self._snapshot()
        spawned = self._spawn_for(cam, render_seed)
        maps = rasterize(self.layout, cam, self.run_config.render.near)
        condition = self._condition(maps, cfg.coarse_resolution)
        frame = render_image(self.field, self.layout, cam, self.run_config.render, render_seed)
        image = frame.image_chw()
        x0 = to_diffusion_space(image).float()

        terms = self._guidance_terms(x0, condition, cam, gen)
        losses: Dict[str, torch.Tensor] = {}
        if cfg.lg_vsd_weight > 0:
            losses["guidance"] = cfg.lg_vsd_weight * distillation_surrogate(x0, terms.gradient)
        if cfg.feature_weight > 0:
            generated = from_diffusion_space(terms.x0_estimate).to(image.dtype)
            losses["feature"] = cfg.feature_weight * feature_consistency_loss(image, generated, self.stack.encoder)
        self._depth_and_sky(frame, maps, cam, losses)

        values: Dict[str, float] = {"spawned": float(spawned)}
        if losses:
            values.update(self._apply(losses, snapshot, step, phase))

        if cfg.guidance != "sds" and step % cfg.adapter_every == 0:
            adapter_condition = condition if cfg.guidance == "lg_vsd" else None
            values["adapter"] = adapter_step(self.stack.adapted, x0.detach(), [cam], adapter_condition,
                                             self.style, self.stack.schedule, self.stack.adapter_optimizer, gen)
        return values

    def refine_step(self, step: int) -> Dict[str, float]:
        cfg = self.cfg
        schedule = self.stack.schedule
        rng = self._step_rng("refine", step)
        cam = self.sampler.sample(rng, cfg.refine_resolution)
        render_seed = int(rng.integers(2 ** 31))
        gen = make_generator(render_seed)

        snapshot = self._snapshot()
        spawned = self._spawn_for(cam, render_seed)
        maps = rasterize(self.layout, cam, self.run_config.render.near)
        condition = None if cfg.unconditional_refine else self._condition(maps, cfg.refine_resolution)
        frame = render_image(self.field, self.layout, cam, self.run_config.render, render_seed)
        image = frame.image_chw()

        t0 = refine_start(cfg.refine_t0, schedule)
        style = None if cfg.unconditional_refine else self.style
        refined = resample_refine(image.detach().float(), condition, style, self.stack.base, schedule, t0,
                                  RefineMode(cfg.refine_mode), gen, cfg.refine_stride)
        losses: Dict[str, torch.Tensor] = {}
        if cfg.refine_weight > 0:
            losses["refine"] = cfg.refine_weight * refine_mse(image, refined)
        self._depth_and_sky(frame, maps, cam, losses)

        values: Dict[str, float] = {"spawned": float(spawned)}
        if losses:
            values.update(self._apply(losses, snapshot, step, "refine"))
        return values

    def run(self, phase: str, steps: int) -> TrainResult:
        history: List[Dict[str, float]] = []
        step_fn = self.refine_step if phase == "refine" else (lambda s: self.optimize_step(s, phase))
        for step in tqdm(range(steps), desc=phase, disable=None):
            values = step_fn(step)
            history.append(values)
            self._record(step, phase, values, steps - 1)
        distance = None
        if self.painter is not None and self.eval_cameras:
            distance = evaluate_painter_distance(self.field, self.layout, self.eval_cameras, self.painter,
                                                 self.style, self.run_config.render)
            self.metrics.append({"step": steps, "phase": f"{phase}_eval", "painter_distance": distance})
            logger.info(f"{phase} 完成: {steps} 步，留出视角画师距离 {distance:.4f}")
        if self.checkpoint_path is not None:
            save_field(self.field, self.checkpoint_path)
        return TrainResult(self.field, steps, history, distance)


def refine_start(fraction: float, schedule: NoiseSchedule) -> int:
    """细化起始时间步 t0 = round(fraction·steps)"""
    return min(int(round(fraction * schedule.steps)), schedule.steps - 1)


def optimize_scene(layout: SceneLayout, field: SceneField, stack: GuidanceStack, sampler: TrajectorySampler,
                   run_config: RunConfig, steps: Optional[int] = None, style: Optional[int] = None,
                   phase: str = "optimize", **trainer_kwargs) -> TrainResult:
    """
    粗阶段优化：每步采样相机，光栅化编码条件，渲染 x0 = g(θ, T)，
    LG-VSD 梯度经渲染器链式回传，叠加特征/深度/天空损失后更新 θ；每 k 步更新一次适配器

    Raises:
        TrainingDivergedError: 出现非有限损失或参数（θ 已恢复为上一步的值）
    """
    steps = run_config.train.optimize_steps if steps is None else steps
    trainer = SceneTrainer(field, layout, stack, run_config, sampler, style, **trainer_kwargs)
    logger.info(f"开始 {phase}: {steps} 步，引导 {run_config.train.guidance}，"
                f"分辨率 {run_config.train.coarse_resolution}²，布局约束采样 {run_config.render.layout_constraint}")
    return trainer.run(phase, steps)


def refine_scene(layout: SceneLayout, field: SceneField, stack: GuidanceStack, sampler: TrajectorySampler,
                 run_config: RunConfig, steps: Optional[int] = None, **trainer_kwargs) -> TrainResult:
    """
    布局感知细化：渲染 I_r，加噪到 t0 后条件去噪得到 I_f，以 refine_mse（+ 深度、天空）更新 θ

    t0 = 0 时 I_f 与 I_r 相同，直接返回
    """
    steps = run_config.train.refine_steps if steps is None else steps
    t0 = refine_start(run_config.train.refine_t0, stack.schedule)
    if t0 == 0 or steps == 0:
        logger.info("细化起始时间步为0或步数为0，跳过细化")
        return TrainResult(field, 0)
    trainer = SceneTrainer(field, layout, stack, run_config, sampler, **trainer_kwargs)
    logger.info(f"开始细化: {steps} 步，t0={t0}，分辨率 {run_config.train.refine_resolution}²，"
                f"{'无条件' if run_config.train.unconditional_refine else '条件'}细化")
    return trainer.run("refine", steps)
