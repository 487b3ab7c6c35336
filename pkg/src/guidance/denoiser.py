#!/usr/bin/env python3
"""
条件去噪器接口与桌面规模的玩具去噪器

条件通道（语义 one-hot + 逆深度）与带噪图像按通道拼接后输入卷积网络，
时间步正弦嵌入与风格嵌入作为逐通道偏置加到隐藏特征上。
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.common.errors import ConfigError, ShapeMismatchError

from .schedule import Timestep

STYLE_NAMES = ("day", "night", "snow")
IMAGE_CHANNELS = 3

StyleId = Union[int, torch.Tensor, None]


@dataclass
class DenoiserConfig:
    """玩具去噪器结构参数"""
    condition_channels: int = 6
    hidden_channels: int = 32
    layers: int = 4
    time_embedding_dim: int = 32
    style_count: int = len(STYLE_NAMES)
    seed: int = 0

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigError("去噪器至少需要2层卷积", {"layers": self.layers})
        if self.condition_channels < 0 or self.hidden_channels < 1 or self.style_count < 1:
            raise ConfigError("去噪器通道配置无效")
        if self.time_embedding_dim % 2:
            raise ConfigError("时间嵌入维度必须为偶数", {"time_embedding_dim": self.time_embedding_dim})


class BaseDenoiser(ABC):
    """去噪器统一接口 ε(x_t, t, condition, style)"""

    @abstractmethod
    def predict_noise(self, x_t: torch.Tensor, t: Timestep, condition: Optional[torch.Tensor],
                      style: StyleId, camera: Optional[torch.Tensor] = None) -> torch.Tensor:
        """返回与 x_t 同形状的噪声预测；camera 仅适配去噪器使用"""


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """正弦时间步嵌入 (B,) -> (B, dim)"""
    half = dim // 2
    frequencies = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    angles = t.to(torch.float64)[:, None] * frequencies[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def as_batch(x: torch.Tensor) -> torch.Tensor:
    return x[None] if x.dim() == 3 else x


class ToyDenoiser(nn.Module, BaseDenoiser):
    """
    小型卷积噪声预测网络

    条件为 None 时条件通道置零，style 为 None 时使用额外的无条件风格token
    """

    def __init__(self, config: Optional[DenoiserConfig] = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        cfg = self.config
        gen = torch.Generator().manual_seed(int(cfg.seed))
        hidden = cfg.hidden_channels

        convs = [nn.Conv2d(IMAGE_CHANNELS + cfg.condition_channels, hidden, 3, padding=1)]
        for _ in range(cfg.layers - 2):
            convs.append(nn.Conv2d(hidden, hidden, 3, padding=1))
        convs.append(nn.Conv2d(hidden, IMAGE_CHANNELS, 3, padding=1))
        self.convs = nn.ModuleList(convs)
        self.time_mlp = nn.Linear(cfg.time_embedding_dim, hidden)
        self.style_embedding = nn.Embedding(cfg.style_count + 1, hidden)
        self._init_parameters(gen)

    def _init_parameters(self, gen: torch.Generator) -> None:
        with torch.no_grad():
            for module in list(self.convs) + [self.time_mlp]:
                fan_in = module.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.copy_((torch.rand(module.weight.shape, generator=gen) * 2.0 - 1.0) * bound)
                module.bias.zero_()
            self.style_embedding.weight.copy_(torch.randn(self.style_embedding.weight.shape, generator=gen) * 0.02)

    @property
    def unconditional_style(self) -> int:
        return self.config.style_count

    def _style_index(self, style: StyleId, batch: int) -> torch.Tensor:
        if style is None:
            style = self.unconditional_style
        index = torch.as_tensor(style, dtype=torch.long).reshape(-1)
        if int(index.min()) < 0 or int(index.max()) > self.config.style_count:
            raise ConfigError("风格token超出词表", {"style": index.tolist()})
        return index.expand(batch) if index.numel() == 1 else index

    def _condition_batch(self, condition: Optional[torch.Tensor], x_t: torch.Tensor) -> torch.Tensor:
        batch, _, height, width = x_t.shape
        channels = self.config.condition_channels
        if condition is None:
            return x_t.new_zeros(batch, channels, height, width)
        condition = as_batch(condition).to(x_t.dtype)
        if condition.shape[1] != channels or tuple(condition.shape[-2:]) != (height, width):
            raise ShapeMismatchError("条件张量与图像尺寸或通道数不一致",
                                     {"condition": tuple(condition.shape), "image": tuple(x_t.shape)})
        return condition.expand(batch, -1, -1, -1) if condition.shape[0] == 1 else condition

    def forward(self, x_t: torch.Tensor, t: Timestep, condition: Optional[torch.Tensor] = None,
                style: StyleId = None, extra_bias: Optional[torch.Tensor] = None) -> torch.Tensor:
        single = x_t.dim() == 3
        x = as_batch(x_t)
        batch = x.shape[0]
        steps = torch.as_tensor(t).reshape(-1)
        if steps.numel() == 1:
            steps = steps.expand(batch)

        h = torch.cat([x, self._condition_batch(condition, x)], dim=1)
        h = self.convs[0](h)
        embedding = self.time_mlp(timestep_embedding(steps, self.config.time_embedding_dim).to(h.dtype))
        embedding = embedding + self.style_embedding(self._style_index(style, batch))
        if extra_bias is not None:
            embedding = embedding + extra_bias
        h = F.silu(h + embedding[:, :, None, None])
        for conv in self.convs[1:-1]:
            h = F.silu(conv(h))
        out = self.convs[-1](h)
        return out[0] if single else out

    def predict_noise(self, x_t, t, condition, style, camera=None):
        return self.forward(x_t, t, condition, style)
