#!/usr/bin/env python3
"""
低秩适配去噪器 ε_φ

基础去噪器冻结；每个权重矩阵/卷积核 W 叠加低秩增量 (α/r)·B·A（B 零初始化），
相机外参经零初始化的线性层映射为逐通道偏置。增量与相机嵌入全为0时输出与基础去噪器逐位一致。
秩为0时不创建任何可训练参数，直接调用基础去噪器。
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from src.common.errors import ConfigError
from src.common.logger import get_logger
from src.raster.camera import Camera

from .denoiser import BaseDenoiser, StyleId, ToyDenoiser, as_batch
from .schedule import NoiseSchedule, Timestep

logger = get_logger(__name__)

CAMERA_FEATURES = 12
TRANSLATION_ENTRIES = (3, 7, 11)


@dataclass
class AdapterConfig:
    rank: int = 4
    alpha: Optional[float] = None
    lr: float = 1e-3
    weight_decay: float = 0.0
    translation_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.rank < 0:
            raise ConfigError("LoRA 秩不能为负", {"rank": self.rank})

    @property
    def scaling(self) -> float:
        if self.rank == 0:
            return 0.0
        return (self.alpha if self.alpha is not None else self.rank) / self.rank


def camera_features(cam: Camera, translation_scale: float = 0.01) -> torch.Tensor:
    """3x4 外参展平，平移分量按比例缩小"""
    features = torch.from_numpy(cam.extrinsics_vector())
    features[list(TRANSLATION_ENTRIES)] *= translation_scale
    return features


def _slot(name: str) -> str:
    return name.replace(".", "__")


class AdaptedDenoiser(nn.Module, BaseDenoiser):
    """LoRA 适配去噪器，实现 BaseDenoiser 接口"""

    def __init__(self, base: ToyDenoiser, config: Optional[AdapterConfig] = None):
        super().__init__()
        self.config = config or AdapterConfig()
        self.base = base
        self.base.requires_grad_(False)
        self.lora_A = nn.ParameterDict()
        self.lora_B = nn.ParameterDict()
        self.camera_embedding: Optional[nn.Linear] = None
        self._targets: List[str] = []

        if self.config.rank > 0:
            gen = torch.Generator().manual_seed(int(self.config.seed))
            for name, weight in base.named_parameters():
                if not name.endswith("weight") or weight.dim() < 2:
                    continue
                out_features = weight.shape[0]
                in_features = weight[0].numel()
                bound = 1.0 / math.sqrt(in_features)
                a = (torch.rand(self.config.rank, in_features, generator=gen, dtype=torch.float64) * 2.0 - 1.0) * bound
                self.lora_A[_slot(name)] = nn.Parameter(a.to(weight.dtype))
                self.lora_B[_slot(name)] = nn.Parameter(torch.zeros(out_features, self.config.rank, dtype=weight.dtype))
                self._targets.append(name)
            self.camera_embedding = nn.Linear(CAMERA_FEATURES, base.config.hidden_channels)
            with torch.no_grad():
                self.camera_embedding.weight.zero_()
                self.camera_embedding.bias.zero_()
        logger.debug(f"LoRA 适配: 秩 {self.config.rank}，目标权重 {len(self._targets)} 个")

    @property
    def rank(self) -> int:
        return self.config.rank

    def trainable_parameters(self) -> List[nn.Parameter]:
        params = list(self.lora_A.values()) + list(self.lora_B.values())
        if self.camera_embedding is not None:
            params += list(self.camera_embedding.parameters())
        return params

    def adapted_weights(self) -> Dict[str, torch.Tensor]:
        weights = {}
        for name in self._targets:
            base_weight = self.base.get_parameter(name).detach()
            delta = self.lora_B[_slot(name)] @ self.lora_A[_slot(name)]
            weights[name] = base_weight + self.config.scaling * delta.reshape(base_weight.shape)
        return weights

    def forward(self, x_t: torch.Tensor, t: Timestep, condition: Optional[torch.Tensor] = None,
                style: StyleId = None, camera: Optional[torch.Tensor] = None) -> torch.Tensor:
        if self.rank == 0:
            return self.base(x_t, t, condition, style)
        extra_bias = None
        if camera is not None:
            if camera.dim() == 1:
                camera = camera[None]
            extra_bias = self.camera_embedding(camera.to(self.camera_embedding.weight.dtype))
        return functional_call(self.base, self.adapted_weights(), (x_t, t, condition, style),
                               {"extra_bias": extra_bias})

    def predict_noise(self, x_t, t, condition, style, camera=None):
        return self.forward(x_t, t, condition, style, camera)


def make_adapter_optimizer(adapted: AdaptedDenoiser) -> Optional[torch.optim.Optimizer]:
    params = adapted.trainable_parameters()
    if not params:
        return None
    return torch.optim.AdamW(params, lr=adapted.config.lr, weight_decay=adapted.config.weight_decay)


def adapter_step(adapted: AdaptedDenoiser, x0_batch: torch.Tensor, cameras: Sequence[Camera],
                 conditions: Optional[torch.Tensor], style: StyleId, schedule: NoiseSchedule,
                 optimizer: Optional[torch.optim.Optimizer], gen: Optional[torch.Generator] = None) -> float:
    """
    适配器一步更新：在新采样的 (t, ε) 上最小化 ||ε_φ(x_t, t, T, y, cond) - ε||²

    x0_batch 与场梯度断开；基础去噪器参数不参与更新
    """
    x0 = as_batch(x0_batch.detach()).to(adapted.base.convs[0].weight.dtype)
    batch = x0.shape[0]
    t = schedule.sample_timestep(gen, count=batch)
    noise = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    x_t = schedule.perturb(x0, t, noise)
    camera = torch.stack([camera_features(cam, adapted.config.translation_scale) for cam in cameras])

    if optimizer is None:
        with torch.no_grad():
            return float(F.mse_loss(adapted(x_t, t, conditions, style, camera), noise))

    optimizer.zero_grad()
    loss = F.mse_loss(adapted(x_t, t, conditions, style, camera), noise)
    loss.backward()
    optimizer.step()
    return float(loss.detach())
