#!/usr/bin/env python3
"""
体渲染合成

α_i = 1 - exp(-σ_i δ_i)，T_i = Π_{j<i}(1 - α_j) = exp(-Σ_{j<i} σ_j δ_j)
颜色 = Σ T_i α_i c_i + (1 - Σ T_i α_i)·天空色
"""
from dataclasses import dataclass

import torch

DEPTH_EPSILON = 1e-6


@dataclass
class CompositeResult:
    """(R,) 或 (R, 3) 的逐光线结果，weights 为 (R, N) 的 T_i α_i"""
    color: torch.Tensor
    depth: torch.Tensor
    opacity: torch.Tensor
    weights: torch.Tensor


def compositing_weights(sigma: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    optical = sigma * delta
    alpha = -torch.expm1(-optical)
    accumulated = torch.cumsum(optical, dim=-1)
    transmittance = torch.exp(-(accumulated - optical))
    return transmittance * alpha


def volume_composite(sigma: torch.Tensor, rgb: torch.Tensor, delta: torch.Tensor, t: torch.Tensor,
                     background: torch.Tensor) -> CompositeResult:
    """
    Args:
        sigma, delta, t: (R, N)，t 为样本处的光线参数
        rgb: (R, N, 3)
        background: (R, 3) 天空颜色
    """
    weights = compositing_weights(sigma, delta)
    opacity = weights.sum(dim=-1)
    color = (weights[..., None] * rgb).sum(dim=-2) + (1.0 - opacity)[..., None] * background
    depth = (weights * t).sum(dim=-1) / torch.clamp(opacity, min=DEPTH_EPSILON)
    return CompositeResult(color, depth, opacity, weights)
