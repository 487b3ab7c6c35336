#!/usr/bin/env python3
"""
重采样细化与完整生成

图像在 [0,1] 空间进出，内部映射到扩散空间 2x-1。
细化：加噪到 t0，再用条件去噪器逐步祖先采样回到 0；确定性模式不注入噪声。
"""
from enum import Enum
from typing import List, Optional, Sequence, Union

import torch

from src.common.errors import ConfigError

from .denoiser import BaseDenoiser, StyleId
from .schedule import NoiseSchedule


class RefineMode(Enum):
    STOCHASTIC = "stochastic"
    DETERMINISTIC = "deterministic"


def to_diffusion_space(image: torch.Tensor) -> torch.Tensor:
    return image * 2.0 - 1.0


def from_diffusion_space(x: torch.Tensor) -> torch.Tensor:
    return ((x + 1.0) * 0.5).clamp(0.0, 1.0)


def timestep_sequence(t0: int, stride: int = 1) -> List[int]:
    """t0, t0-stride, ..., 0（末项固定为0）"""
    steps = list(range(t0, 0, -stride))
    return steps + [0]


def _denoise(x_t: torch.Tensor, t0: int, condition: Optional[torch.Tensor], style: StyleId,
             denoiser: BaseDenoiser, schedule: NoiseSchedule, mode: RefineMode,
             gen: Optional[torch.Generator], stride: int) -> torch.Tensor:
    sequence = timestep_sequence(t0, stride)
    x = x_t
    for t, t_prev in zip(sequence[:-1], sequence[1:]):
        noise_pred = denoiser.predict_noise(x, t, condition, style)
        noise = None
        if mode is RefineMode.STOCHASTIC and t_prev > 0:
            noise = torch.randn(x.shape, generator=gen, dtype=x.dtype)
        x = schedule.posterior_step(x, t, t_prev, noise_pred, noise)
    return x


def resample_refine(image: torch.Tensor, condition: Optional[torch.Tensor], style: StyleId,
                    denoiser: BaseDenoiser, schedule: NoiseSchedule, t0: int,
                    mode: Union[str, RefineMode] = RefineMode.STOCHASTIC,
                    gen: Optional[torch.Generator] = None, stride: int = 1) -> torch.Tensor:
    """
    I_r -> I_p（加噪到 t0）-> I_f（逐步去噪）

    condition 为 None 时为无条件细化
    """
    mode = RefineMode(mode)
    if not 0 <= t0 < schedule.steps:
        raise ConfigError("细化起始时间步必须满足 0 <= t0 < steps", {"t0": t0, "steps": schedule.steps})
    if stride < 1:
        raise ConfigError("stride 必须 >= 1", {"stride": stride})
    if t0 == 0:
        return image
    with torch.no_grad():
        x0 = to_diffusion_space(image.detach())
        noise = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        if mode is RefineMode.DETERMINISTIC:
            noise = torch.zeros_like(x0)
        x_t = schedule.perturb(x0, t0, noise)
        return from_diffusion_space(_denoise(x_t, t0, condition, style, denoiser, schedule, mode, gen, stride))


def generate(denoiser: BaseDenoiser, schedule: NoiseSchedule, condition: Optional[torch.Tensor], style: StyleId,
             shape: Sequence[int], gen: Optional[torch.Generator] = None, stride: int = 1,
             dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """从纯噪声出发的完整反向过程，返回 [0,1] 图像"""
    with torch.no_grad():
        x_t = torch.randn(tuple(shape), generator=gen, dtype=dtype)
        result = _denoise(x_t, schedule.steps - 1, condition, style, denoiser, schedule,
                          RefineMode.STOCHASTIC, gen, stride)
        return from_diffusion_space(result)
