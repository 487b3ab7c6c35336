#!/usr/bin/env python3
"""
玩具去噪器预训练

数据集由 (布局, 相机) 对组成：光栅化得到条件图，画师按每种风格生成目标图像。
训练目标为标准噪声预测 ||ε_θ(x_t, t, cond, y) - ε||²，按 condition_dropout
的比例同时丢弃条件图与风格token，使无条件分支（细化消融所用）同样可用。
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from tqdm import tqdm

from src.common.errors import ConfigError, TrainingDivergedError
from src.common.helpers import make_generator
from src.common.logger import get_logger
from src.guidance.denoiser import ToyDenoiser
from src.guidance.refinement import to_diffusion_space
from src.guidance.schedule import NoiseSchedule
from src.layout.primitives import SceneLayout
from src.raster.camera import Camera
from src.raster.rasterizer import encode_condition, rasterize

from .config import RunConfig
from .painter import PainterOracle

logger = get_logger(__name__)

VALIDATION_SEED_OFFSET = 104729


@dataclass
class PretrainDataset:
    """
    Attributes:
        images: (N, 3, H, W) 扩散空间图像
        conditions: (N, C, H, W) 条件张量
        styles: (N,) 风格token
    """
    images: torch.Tensor
    conditions: torch.Tensor
    styles: torch.Tensor

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class PretrainReport:
    denoiser: ToyDenoiser
    final_loss: float
    validation_loss: float
    steps: int


def build_dataset(scenes: Sequence[Tuple[SceneLayout, Sequence[Camera]]], painter: PainterOracle,
                  resolution: int, styles: Sequence[int]) -> PretrainDataset:
    """每个 (布局, 相机, 风格) 组合生成一个样本"""
    if not scenes:
        raise ConfigError("预训练数据集不能为空")
    class_counts = {layout.class_count for layout, _ in scenes}
    if len(class_counts) != 1:
        raise ConfigError("预训练布局的类别数必须一致", {"class_counts": sorted(class_counts)})
    class_count = class_counts.pop()

    images, conditions, tokens = [], [], []
    for layout, cameras in scenes:
        for cam in cameras:
            maps = rasterize(layout, cam.resized(resolution, resolution))
            condition = encode_condition(maps, class_count, resolution)
            for style in styles:
                painted = torch.from_numpy(painter.paint(maps, style)).permute(2, 0, 1).float()
                images.append(to_diffusion_space(painted))
                conditions.append(condition)
                tokens.append(style)
    if not images:
        raise ConfigError("预训练数据集中没有相机")
    return PretrainDataset(torch.stack(images), torch.stack(conditions), torch.tensor(tokens, dtype=torch.long))


def noise_loss(denoiser: ToyDenoiser, schedule: NoiseSchedule, images: torch.Tensor, conditions: torch.Tensor,
               styles: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    t = schedule.sample_timestep(gen, count=images.shape[0])
    noise = torch.randn(images.shape, generator=gen, dtype=images.dtype)
    x_t = schedule.perturb(images, t, noise)
    return F.mse_loss(denoiser(x_t, t, conditions, styles), noise)


def validation_loss(denoiser: ToyDenoiser, schedule: NoiseSchedule, dataset: PretrainDataset, seed: int) -> float:
    """固定 (t, ε) 下的全数据集噪声损失，不做条件丢弃"""
    gen = make_generator(seed + VALIDATION_SEED_OFFSET)
    with torch.no_grad():
        return float(noise_loss(denoiser, schedule, dataset.images, dataset.conditions, dataset.styles, gen))


def _drop_conditions(denoiser: ToyDenoiser, conditions: torch.Tensor, styles: torch.Tensor,
                     probability: float, gen: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    if probability <= 0.0:
        return conditions, styles
    dropped = torch.rand(styles.shape[0], generator=gen) < probability
    conditions = torch.where(dropped[:, None, None, None], torch.zeros_like(conditions), conditions)
    styles = torch.where(dropped, torch.full_like(styles, denoiser.unconditional_style), styles)
    return conditions, styles


def pretrain_toy_denoiser(scenes: Sequence[Tuple[SceneLayout, Sequence[Camera]]], painter: PainterOracle,
                          schedule: NoiseSchedule, run_config: RunConfig,
                          denoiser: Optional[ToyDenoiser] = None,
                          styles: Optional[Sequence[int]] = None) -> PretrainReport:
    """
    在画师数据集上训练玩具去噪器

    Args:
        scenes: (布局, 相机列表) 序列，布局类别数需一致
        denoiser: 已有去噪器时继续训练，否则按配置新建
        styles: 参与训练的风格，默认全部

    Raises:
        TrainingDivergedError: 训练损失出现非有限值
    """
    cfg = run_config.train
    layout = scenes[0][0] if scenes else None
    if layout is None:
        raise ConfigError("预训练数据集不能为空")
    denoiser = denoiser or ToyDenoiser(run_config.denoiser_for(layout))
    styles = list(range(denoiser.config.style_count)) if styles is None else list(styles)

    dataset = build_dataset(scenes, painter, cfg.pretrain_resolution, styles)
    logger.info(f"预训练数据集: {len(dataset)} 个样本，分辨率 {cfg.pretrain_resolution}²，风格 {styles}")

    gen = make_generator(cfg.seed)
    final = validation_loss(denoiser, schedule, dataset, cfg.seed)
    if cfg.pretrain_steps == 0:
        logger.info("预训练步数为0，返回初始去噪器")
        return PretrainReport(denoiser, final, final, 0)

    optimizer = torch.optim.AdamW(denoiser.parameters(), lr=cfg.pretrain_lr, weight_decay=0.0)
    history: List[float] = []
    denoiser.train()
    for step in tqdm(range(cfg.pretrain_steps), desc="pretrain", disable=None):
        index = torch.randint(0, len(dataset), (min(cfg.pretrain_batch, len(dataset)),), generator=gen)
        conditions, tokens = _drop_conditions(denoiser, dataset.conditions[index], dataset.styles[index],
                                              cfg.condition_dropout, gen)
        loss = noise_loss(denoiser, schedule, dataset.images[index], conditions, tokens, gen)
        if not torch.isfinite(loss):
            logger.error(f"预训练第 {step} 步损失非有限: {float(loss)}")
            raise TrainingDivergedError("去噪器预训练发散", {"step": step, "loss": float(loss)})
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(denoiser.parameters(), cfg.grad_clip)
        optimizer.step()
        history.append(float(loss.detach()))
        if cfg.log_every and step % cfg.log_every == 0:
            logger.debug(f"预训练 step={step} loss={history[-1]:.5f}")
    denoiser.eval()

    validation = validation_loss(denoiser, schedule, dataset, cfg.seed)
    tail = history[-min(len(history), 50):]
    final = sum(tail) / len(tail)
    logger.info(f"预训练完成: {cfg.pretrain_steps} 步，训练损失 {final:.4f}，验证损失 {validation:.4f}")
    return PretrainReport(denoiser, final, validation, cfg.pretrain_steps)
