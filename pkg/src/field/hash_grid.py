#!/usr/bin/env python3
"""
多分辨率哈希编码 + 小型解码网络

每层：坐标缩放到该层分辨率，取所在体素8个角点，
角点索引 = (x·1 xor y·2654435761 xor z·805459861) & (table_size-1)，
三线性插值后各层特征拼接。哈希冲突不做处理，由梯度平均消解。
"""
import math
import zlib
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.common.errors import ConfigError, GridContractError

HASH_PRIMES = (1, 2654435761, 805459861)
TABLE_INIT_RANGE = 1e-4


@dataclass
class HashGridConfig:
    """哈希网格超参数"""
    levels: int = 8
    base_resolution: int = 16
    per_level_scale: float = 1.5
    table_size: int = 2 ** 16
    features_per_level: int = 2
    decoder_widths: Tuple[int, ...] = (64,)

    def __post_init__(self):
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if self.levels < 1:
            raise ConfigError("levels 必须 >= 1", {"levels": self.levels})
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ConfigError("table_size 必须是2的幂", {"table_size": self.table_size})
        if self.base_resolution < 1 or self.per_level_scale < 1.0 or self.features_per_level < 1:
            raise ConfigError("哈希网格分辨率参数无效")

    @property
    def feature_dim(self) -> int:
        return self.levels * self.features_per_level

    def level_resolutions(self) -> Tuple[int, ...]:
        return tuple(int(math.floor(self.base_resolution * self.per_level_scale ** level))
                     for level in range(self.levels))


def seeded_generator(seed: int, key: str) -> torch.Generator:
    """按 (种子, 网格键) 派生独立随机源，网格初始化与创建顺序无关"""
    gen = torch.Generator()
    gen.manual_seed((int(seed) * 1_000_003 + zlib.crc32(key.encode("utf-8"))) % (2 ** 63 - 1))
    return gen


def spatial_hash(corners: torch.Tensor, table_size: int) -> torch.Tensor:
    """corners: (..., 3) int64 -> (...) 表索引"""
    index = corners[..., 0] * HASH_PRIMES[0]
    index = torch.bitwise_xor(index, corners[..., 1] * HASH_PRIMES[1])
    index = torch.bitwise_xor(index, corners[..., 2] * HASH_PRIMES[2])
    return torch.bitwise_and(index, table_size - 1)


def init_linear_(layer: nn.Linear, gen: torch.Generator) -> None:
    """权重 U(-1/sqrt(fan_in), 1/sqrt(fan_in))，偏置置零"""
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.copy_((torch.rand(layer.weight.shape, generator=gen, dtype=torch.float64) * 2.0 - 1.0) * bound)
        layer.bias.zero_()


class HashEncoding(nn.Module):
    """多分辨率哈希编码表 (levels, table_size, features_per_level)"""

    def __init__(self, config: HashGridConfig, gen: torch.Generator):
        super().__init__()
        self.config = config
        table = (torch.rand(config.levels, config.table_size, config.features_per_level,
                            generator=gen, dtype=torch.float64) * 2.0 - 1.0) * TABLE_INIT_RANGE
        self.table = nn.Parameter(table.float())
        self.register_buffer("resolutions", torch.tensor(config.level_resolutions(), dtype=torch.float64),
                             persistent=False)
        offsets = [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        self.register_buffer("corner_offsets", torch.tensor(offsets, dtype=torch.int64), persistent=False)

    def forward(self, p_canonical: torch.Tensor) -> torch.Tensor:
        """
        Args:
            p_canonical: (P, 3)，分量位于 [0, 1]

        Returns:
            (P, levels * features_per_level) float64；插值权重与加权和均在 float64 下计算
        """
        levels = self.config.levels
        scaled = p_canonical.to(torch.float64)[:, None, :] * self.resolutions[None, :, None]  # (P, L, 3)
        base = torch.floor(scaled)
        frac = scaled - base
        corners = base.long()[:, :, None, :] + self.corner_offsets[None, None]  # (P, L, 8, 3)
        index = spatial_hash(corners, self.config.table_size)

        level_index = torch.arange(levels, device=index.device)[None, :, None]
        features = self.table[level_index, index].to(torch.float64)  # (P, L, 8, F)

        upper = self.corner_offsets.bool()[None, None]
        axis_weights = torch.where(upper, frac[:, :, None, :], 1.0 - frac[:, :, None, :])
        weights = axis_weights.prod(dim=-1)  # (P, L, 8)
        encoded = (weights[..., None] * features).sum(dim=2)
        return encoded.reshape(p_canonical.shape[0], levels * self.config.features_per_level)


class NeuralGrid(nn.Module):
    """
    单个哈希网格场：编码 + 解码 (密度logit, RGB)
    密度经 softplus，颜色经 sigmoid，与观察方向无关
    """

    def __init__(self, config: HashGridConfig, seed: int, key: str, tolerance: float = 1e-6):
        super().__init__()
        gen = seeded_generator(seed, key)
        self.key = key
        self.tolerance = tolerance
        self.encoding = HashEncoding(config, gen)

        layers = []
        width = config.feature_dim
        for hidden in config.decoder_widths:
            linear = nn.Linear(width, hidden)
            init_linear_(linear, gen)
            layers += [linear, nn.ReLU()]
            width = hidden
        head = nn.Linear(width, 4)
        init_linear_(head, gen)
        layers.append(head)
        self.decoder = nn.Sequential(*layers)

    def check_canonical(self, p_canonical: torch.Tensor) -> torch.Tensor:
        if p_canonical.numel() == 0:
            return p_canonical
        lo, hi = float(p_canonical.min()), float(p_canonical.max())
        if lo < -self.tolerance or hi > 1.0 + self.tolerance:
            raise GridContractError(f"采样点超出网格 {self.key} 的规范空间", {"min": lo, "max": hi})
        return p_canonical.clamp(0.0, 1.0)

    def forward(self, p_canonical: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        p_canonical = self.check_canonical(p_canonical)
        features = self.encoding(p_canonical)
        raw = self.decoder(features.to(self.decoder[0].weight.dtype))
        sigma = F.softplus(raw[:, 0])
        rgb = torch.sigmoid(raw[:, 1:4])
        return sigma, rgb
