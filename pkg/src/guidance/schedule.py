#!/usr/bin/env python3
"""
扩散噪声调度

β 线性 1e-4 -> 2e-2；ᾱ_t = Π_{s<t}(1 - β_s)，因此 ᾱ_0 = 1，t=0 的加噪是恒等变换。
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import torch

from src.common.errors import ConfigError, ShapeMismatchError

Timestep = Union[int, torch.Tensor]


class Weighting(Enum):
    CONSTANT = "constant"
    SDS = "sds"  # ω(t) = 1 - ᾱ_t


@dataclass
class ScheduleConfig:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    weighting: str = "constant"
    weight_scale: float = 1.0
    t_range: Tuple[float, float] = (0.02, 0.98)

    def __post_init__(self):
        self.t_range = tuple(float(v) for v in self.t_range)
        if self.steps < 2:
            raise ConfigError("steps 必须 >= 2", {"steps": self.steps})
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ConfigError("β 范围无效", {"beta_start": self.beta_start, "beta_end": self.beta_end})
        if not 0.0 <= self.t_range[0] < self.t_range[1] <= 1.0:
            raise ConfigError("t_range 必须位于 [0, 1] 且递增", {"t_range": self.t_range})
        Weighting(self.weighting)


class NoiseSchedule:
    """噪声调度与加噪/去噪公式（float64 存储）"""

    def __init__(self, config: Optional[ScheduleConfig] = None):
        self.config = config or ScheduleConfig()
        self.steps = self.config.steps
        self.betas = torch.linspace(self.config.beta_start, self.config.beta_end, self.steps, dtype=torch.float64)
        self.alphas = 1.0 - self.betas
        self.alphas_cumprod = torch.cat([torch.ones(1, dtype=torch.float64),
                                         torch.cumprod(self.alphas, dim=0)[:-1]])
        self.weighting = Weighting(self.config.weighting)

    def alpha_bar(self, t: Timestep) -> torch.Tensor:
        return self.alphas_cumprod[torch.as_tensor(t, dtype=torch.long)]

    def weight(self, t: Timestep) -> torch.Tensor:
        """ω(t)"""
        if self.weighting is Weighting.SDS:
            value = 1.0 - self.alpha_bar(t)
        else:
            value = torch.ones_like(self.alpha_bar(t))
        return self.config.weight_scale * value

    def _coefficient(self, values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        values = values.to(like.dtype)
        if values.dim() == 0:
            return values
        return values.reshape(-1, *([1] * (like.dim() - 1)))

    def perturb(self, x0: torch.Tensor, t: Timestep, noise: torch.Tensor) -> torch.Tensor:
        """x_t = sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·ε"""
        if x0.shape != noise.shape:
            raise ShapeMismatchError("加噪时 x0 与噪声尺寸不一致",
                                     {"x0": tuple(x0.shape), "noise": tuple(noise.shape)})
        alpha_bar = self.alpha_bar(t)
        a = self._coefficient(alpha_bar.sqrt(), x0)
        b = self._coefficient((1.0 - alpha_bar).sqrt(), x0)
        return a * x0 + b * noise

    def predict_x0(self, x_t: torch.Tensor, t: Timestep, noise_pred: torch.Tensor) -> torch.Tensor:
        """一步估计 x̂0 = (x_t - sqrt(1-ᾱ_t)·ε̂) / sqrt(ᾱ_t)"""
        alpha_bar = self.alpha_bar(t)
        a = self._coefficient(alpha_bar.sqrt(), x_t)
        b = self._coefficient((1.0 - alpha_bar).sqrt(), x_t)
        return (x_t - b * noise_pred) / a

    def sample_timestep(self, gen: Optional[torch.Generator] = None, count: Optional[int] = None) -> torch.Tensor:
        """t ~ U[t_min·steps, t_max·steps] 的整数时间步"""
        low = int(round(self.config.t_range[0] * self.steps))
        high = min(int(round(self.config.t_range[1] * self.steps)), self.steps - 1)
        shape = () if count is None else (count,)
        return torch.randint(low, high + 1, shape, generator=gen)

    def posterior_step(self, x_t: torch.Tensor, t: int, t_prev: int, noise_pred: torch.Tensor,
                       noise: Optional[torch.Tensor]) -> torch.Tensor:
        """
        祖先采样一步 t -> t_prev（t_prev < t，可跨步）

        noise 为 None 时不注入噪声（确定性模式）
        """
        alpha_bar_t = self.alpha_bar(t)
        alpha_bar_prev = self.alpha_bar(t_prev)
        x0_hat = self.predict_x0(x_t, t, noise_pred)
        alpha_step = alpha_bar_t / alpha_bar_prev
        beta_step = 1.0 - alpha_step
        coef_x0 = (alpha_bar_prev.sqrt() * beta_step / (1.0 - alpha_bar_t)).to(x_t.dtype)
        coef_xt = (alpha_step.sqrt() * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t)).to(x_t.dtype)
        mean = coef_x0 * x0_hat + coef_xt * x_t
        if noise is None or t_prev == 0:
            return mean
        variance = (beta_step * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t)).to(x_t.dtype)
        return mean + variance.sqrt() * noise

    def to_meta(self) -> dict:
        return {
            "steps": self.config.steps,
            "beta_start": self.config.beta_start,
            "beta_end": self.config.beta_end,
            "weighting": self.config.weighting,
            "weight_scale": self.config.weight_scale,
            "t_range": list(self.config.t_range),
        }
