# src/guidance 扩散引导：噪声调度、去噪器、LoRA 适配、分数蒸馏与重采样细化
from .adapter import AdaptedDenoiser, AdapterConfig, adapter_step, camera_features, make_adapter_optimizer
from .checkpoint import DenoiserBundle, load_denoiser, save_denoiser
from .denoiser import STYLE_NAMES, BaseDenoiser, DenoiserConfig, ToyDenoiser
from .distillation import (DistillationResult, distillation_surrogate, lg_vsd_gradient, lg_vsd_terms,
                           sds_gradient, sds_terms, vsd_gradient)
from .refinement import RefineMode, generate, resample_refine
from .schedule import NoiseSchedule, ScheduleConfig, Weighting
