#!/usr/bin/env python3
"""
分数蒸馏梯度：SDS / VSD / LG-VSD

三种梯度共用同一次加噪：t、ε、x_t 只生成一次，两个去噪器看到完全相同的输入。
返回的是像素空间梯度 ∂L/∂x0，由调用方通过渲染器链式传回场参数。
"""
from dataclasses import dataclass
from typing import Callable, Optional, Union

import torch

from src.common.errors import ShapeMismatchError
from src.raster.camera import Camera

from .adapter import AdaptedDenoiser, camera_features
from .denoiser import BaseDenoiser, StyleId
from .schedule import NoiseSchedule

NoiseFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
CameraLike = Union[Camera, torch.Tensor, None]


@dataclass
class DistillationResult:
    """一次蒸馏评估的全部中间量（均已与计算图断开）"""
    gradient: torch.Tensor
    t: torch.Tensor
    noise: torch.Tensor
    x_t: torch.Tensor
    pretrained_noise: torch.Tensor
    baseline_noise: torch.Tensor
    weight: torch.Tensor
    x0_estimate: torch.Tensor


def _distill(x0: torch.Tensor, pretrained: NoiseFn, baseline: Optional[NoiseFn], schedule: NoiseSchedule,
             gen: Optional[torch.Generator], t: Optional[int] = None) -> DistillationResult:
    with torch.no_grad():
        x0 = x0.detach()
        step = schedule.sample_timestep(gen) if t is None else torch.as_tensor(t, dtype=torch.long)
        noise = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        x_t = schedule.perturb(x0, step, noise)
        eps_p = pretrained(x_t, step)
        eps_b = noise if baseline is None else baseline(x_t, step)
        weight = schedule.weight(step).to(x0.dtype)
        gradient = weight * (eps_p - eps_b)
        x0_estimate = schedule.predict_x0(x_t, step, eps_p)
    return DistillationResult(gradient, step, noise, x_t, eps_p, eps_b, weight, x0_estimate)


def _camera_tensor(adapted: AdaptedDenoiser, camera: CameraLike) -> Optional[torch.Tensor]:
    if isinstance(camera, Camera):
        return camera_features(camera, adapted.config.translation_scale)
    return camera


def _check_condition(x0: torch.Tensor, condition: torch.Tensor) -> None:
    if tuple(condition.shape[-2:]) != tuple(x0.shape[-2:]):
        raise ShapeMismatchError("条件图分辨率与图像不一致",
                                 {"condition": tuple(condition.shape), "image": tuple(x0.shape)})


def sds_terms(x0: torch.Tensor, denoiser: BaseDenoiser, schedule: NoiseSchedule,
              condition: Optional[torch.Tensor], style: StyleId, gen: Optional[torch.Generator] = None,
              t: Optional[int] = None) -> DistillationResult:
    return _distill(x0, lambda x_t, step: denoiser.predict_noise(x_t, step, condition, style),
                    None, schedule, gen, t)


def sds_gradient(x0, denoiser, schedule, condition, style, gen=None, t=None) -> torch.Tensor:
    """ω(t)·(ε_p(x_t, t, y) - ε)"""
    return sds_terms(x0, denoiser, schedule, condition, style, gen, t).gradient


def lg_vsd_terms(x0: torch.Tensor, base: BaseDenoiser, adapted: AdaptedDenoiser, schedule: NoiseSchedule,
                 condition: Optional[torch.Tensor], camera: CameraLike, style: StyleId,
                 gen: Optional[torch.Generator] = None, t: Optional[int] = None) -> DistillationResult:
    if condition is not None:
        _check_condition(x0, condition)
    camera_tensor = _camera_tensor(adapted, camera)
    return _distill(
        x0,
        lambda x_t, step: base.predict_noise(x_t, step, condition, style),
        lambda x_t, step: adapted.predict_noise(x_t, step, condition, style, camera_tensor),
        schedule, gen, t,
    )


def lg_vsd_gradient(x0, base, adapted, schedule, condition, camera, style, gen=None, t=None) -> torch.Tensor:
    """ω(t)·(ε_p(x_t, t, y, F(L(T))) - ε_φ(x_t, t, T, y, F(L(T))))，两个去噪器使用同一条件张量"""
    return lg_vsd_terms(x0, base, adapted, schedule, condition, camera, style, gen, t).gradient


def vsd_gradient(x0, base, adapted, schedule, camera, style, gen=None, t=None) -> torch.Tensor:
    """ω(t)·(ε_p(x_t, t, y) - ε_φ(x_t, t, T, y))，不带布局条件"""
    return lg_vsd_terms(x0, base, adapted, schedule, None, camera, style, gen, t).gradient


def distillation_surrogate(x0: torch.Tensor, gradient: torch.Tensor) -> torch.Tensor:
    """标量代理损失，其对 x0 的梯度恰为 gradient"""
    return (gradient.detach() * x0).sum()
