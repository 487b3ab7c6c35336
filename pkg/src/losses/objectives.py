#!/usr/bin/env python3
"""
辅助损失：特征一致性、单目深度对齐、天空密度、细化 MSE

所有损失非负，在各自的不动点处恰为0。
"""
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.common.errors import DepthAlignmentError, ShapeMismatchError

DEGENERATE_DEPTH_STD = 1e-12


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: 输入尺寸不一致", {"a": tuple(a.shape), "b": tuple(b.shape)})


class FeatureEncoder(nn.Module):
    """
    固定的随机投影卷积特征

    每个卷积核按 L1 范数归一化，配合 tanh 使整体映射 Lipschitz 有界；参数不参与训练
    """

    def __init__(self, channels: Tuple[int, ...] = (16, 32), kernel_size: int = 5, pooled: int = 8, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        layers = []
        in_channels = 3
        for out_channels in channels:
            conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride=2, padding=kernel_size // 2)
            with torch.no_grad():
                weight = torch.randn(conv.weight.shape, generator=gen)
                weight /= weight.abs().sum(dim=(1, 2, 3), keepdim=True)
                conv.weight.copy_(weight)
                conv.bias.zero_()
            layers += [conv, nn.Tanh()]
            in_channels = out_channels
        self.features = nn.Sequential(*layers)
        self.pooled = pooled
        self.requires_grad_(False)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """(3, H, W) 或 (B, 3, H, W) 图像 -> (B, D) 特征"""
        batch = image[None] if image.dim() == 3 else image
        features = self.features(batch.to(self.features[0].weight.dtype))
        return F.adaptive_avg_pool2d(features, self.pooled).flatten(1)


def feature_consistency_loss(rendered: torch.Tensor, generated: torch.Tensor, enc: FeatureEncoder) -> torch.Tensor:
    """||enc(I_r) - enc(I_g)||²"""
    _check_same_shape(rendered, generated, "特征一致性损失")
    return (enc(rendered) - enc(generated)).pow(2).sum()


def depth_align(mono: torch.Tensor, rendered: torch.Tensor,
                valid: Optional[torch.Tensor] = None) -> Tuple[float, float]:
    """最小二乘 (a, b) = argmin Σ_valid (a·rendered + b - mono)²；不对求解过程求导"""
    _check_same_shape(mono, rendered, "深度对齐")
    mono = mono.detach().to(torch.float64).reshape(-1)
    rendered = rendered.detach().to(torch.float64).reshape(-1)
    mask = torch.ones_like(mono, dtype=torch.bool) if valid is None else valid.reshape(-1).bool()
    mask = mask & torch.isfinite(mono) & torch.isfinite(rendered)
    x, y = rendered[mask], mono[mask]
    if x.numel() < 2 or float(x.std()) <= DEGENERATE_DEPTH_STD * max(1.0, float(x.abs().max())):
        raise DepthAlignmentError("渲染深度退化（有效像素不足或深度恒定），尺度无法确定",
                                  {"valid_pixels": int(x.numel())})
    design = torch.stack([x, torch.ones_like(x)], dim=1)
    solution = torch.linalg.lstsq(design, y[:, None]).solution
    return float(solution[0, 0]), float(solution[1, 0])


def depth_loss(mono: torch.Tensor, rendered: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """mean_valid |a·rendered + b - mono|，梯度只流向 rendered"""
    a, b = depth_align(mono, rendered, mask)
    residual = (a * rendered + b - mono.detach().to(rendered.dtype)).abs()
    if mask is None:
        return residual.mean()
    weights = mask.to(rendered.dtype)
    return (residual * weights).sum() / weights.sum()


def sky_loss(opacity: torch.Tensor, sky_mask: torch.Tensor) -> torch.Tensor:
    """天空像素上的平均不透明度；无天空像素时为0"""
    _check_same_shape(opacity, torch.as_tensor(sky_mask), "天空损失")
    mask = torch.as_tensor(sky_mask).to(opacity.device).bool()
    count = int(mask.sum())
    if count == 0:
        return opacity.sum() * 0.0
    return (opacity * mask.to(opacity.dtype)).sum() / count


def refine_mse(rendered: torch.Tensor, refined: torch.Tensor) -> torch.Tensor:
    """||I_r - I_f||² 的均值，I_f 视为常量"""
    _check_same_shape(rendered, refined, "细化MSE")
    return (rendered - refined.detach().to(rendered.dtype)).pow(2).mean()
