#!/usr/bin/env python3
"""
运行配置

YAML 顶层分段与数据类一一对应:
    hash_grid / field / render / schedule / denoiser / adapter / train / mesh
未出现的分段使用默认值，未知分段或未知键报 ConfigError。
"""
from dataclasses import dataclass, field as dataclass_field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from src.common.config_loader import ConfigLoader, build_dataclass, to_plain
from src.common.errors import ConfigError
from src.field.hash_grid import HashGridConfig
from src.field.scene_field import FieldConfig
from src.guidance.adapter import AdapterConfig
from src.guidance.denoiser import DenoiserConfig
from src.guidance.schedule import ScheduleConfig
from src.layout.primitives import SceneLayout
from src.render.sampler import RenderConfig

GUIDANCE_MODES = ("lg_vsd", "vsd", "sds")
SECTIONS = ("hash_grid", "field", "render", "schedule", "denoiser", "adapter", "train", "mesh")


def _is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


@dataclass
class TrainConfig:
    """优化、细化、预训练与编辑微调的超参数"""
    coarse_resolution: int = 256
    refine_resolution: int = 512
    lr: float = 1e-3
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    optimize_steps: int = 2000
    refine_steps: int = 500
    lg_vsd_weight: float = 1.0
    feature_weight: float = 0.1
    depth_weight: float = 0.05
    sky_weight: float = 0.1
    refine_weight: float = 1.0
    guidance: str = "lg_vsd"
    adapter_every: int = 1
    refine_t0: float = 0.2
    refine_stride: int = 10
    refine_mode: str = "stochastic"
    unconditional_refine: bool = False
    style: int = 0
    yaw_range_deg: float = 45.0
    position_jitter: float = 1.0
    min_camera_height: float = 0.5
    edit_fraction: float = 0.1
    eval_cameras: int = 8
    eval_resolution: int = 64
    eval_every: int = 0
    log_every: int = 10
    checkpoint_every: int = 0
    pretrain_steps: int = 2000
    pretrain_batch: int = 8
    pretrain_lr: float = 1e-3
    pretrain_resolution: int = 64
    pretrain_views: int = 16
    condition_dropout: float = 0.1
    painter_seed: int = 0
    mono_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("coarse_resolution", "refine_resolution", "eval_resolution", "pretrain_resolution"):
            if not _is_power_of_two(getattr(self, name)):
                raise ConfigError(f"{name} 必须是2的幂", {name: getattr(self, name)})
        for name in ("lg_vsd_weight", "feature_weight", "depth_weight", "sky_weight", "refine_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} 不能为负", {name: getattr(self, name)})
        if self.guidance not in GUIDANCE_MODES:
            raise ConfigError("未知引导方式", {"guidance": self.guidance, "allowed": GUIDANCE_MODES})
        if not 0.0 <= self.refine_t0 < 1.0:
            raise ConfigError("refine_t0 为时间步比例，必须位于 [0, 1)", {"refine_t0": self.refine_t0})
        if self.adapter_every < 1 or self.refine_stride < 1:
            raise ConfigError("adapter_every 与 refine_stride 必须 >= 1")
        if not 0.0 <= self.edit_fraction <= 1.0:
            raise ConfigError("edit_fraction 必须位于 [0, 1]", {"edit_fraction": self.edit_fraction})


@dataclass
class MeshConfig:
    voxel_size: float = 0.5
    threshold: float = 1.6931471805599454  # softplus(0) + 1
    region_min: Optional[Tuple[float, float, float]] = None
    region_max: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ConfigError("voxel_size 必须为正", {"voxel_size": self.voxel_size})
        if (self.region_min is None) != (self.region_max is None):
            raise ConfigError("region_min 与 region_max 必须同时给出")
        if self.region_min is not None:
            self.region_min = tuple(float(v) for v in self.region_min)
            self.region_max = tuple(float(v) for v in self.region_max)


@dataclass
class RunConfig:
    field: FieldConfig = dataclass_field(default_factory=FieldConfig)
    render: RenderConfig = dataclass_field(default_factory=RenderConfig)
    schedule: ScheduleConfig = dataclass_field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = dataclass_field(default_factory=DenoiserConfig)
    adapter: AdapterConfig = dataclass_field(default_factory=AdapterConfig)
    train: TrainConfig = dataclass_field(default_factory=TrainConfig)
    mesh: MeshConfig = dataclass_field(default_factory=MeshConfig)

    def denoiser_for(self, layout: SceneLayout) -> DenoiserConfig:
        """条件通道数由布局类别数决定（one-hot + 逆深度）"""
        return replace(self.denoiser, condition_channels=layout.class_count + 1)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            field=replace(self.field, seed=seed),
            denoiser=replace(self.denoiser, seed=seed),
            adapter=replace(self.adapter, seed=seed),
            train=replace(self.train, seed=seed),
        )

    def with_render(self, **changes: Any) -> "RunConfig":
        return replace(self, render=replace(self.render, **changes))

    def with_train(self, **changes: Any) -> "RunConfig":
        return replace(self, train=replace(self.train, **changes))


def run_config_from_dict(document: Dict[str, Any]) -> RunConfig:
    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ConfigError("运行配置包含未知分段", {"sections": unknown, "allowed": SECTIONS})
    hash_grid = build_dataclass(HashGridConfig, document.get("hash_grid"), "hash_grid")
    field_section = dict(document.get("field") or {})
    if "hash_grid" in field_section:
        raise ConfigError("哈希网格参数请写在顶层 hash_grid 分段")
    field_config = build_dataclass(FieldConfig, field_section, "field")
    field_config.hash_grid = hash_grid
    return RunConfig(
        field=field_config,
        render=build_dataclass(RenderConfig, document.get("render"), "render"),
        schedule=build_dataclass(ScheduleConfig, document.get("schedule"), "schedule"),
        denoiser=build_dataclass(DenoiserConfig, document.get("denoiser"), "denoiser"),
        adapter=build_dataclass(AdapterConfig, document.get("adapter"), "adapter"),
        train=build_dataclass(TrainConfig, document.get("train"), "train"),
        mesh=build_dataclass(MeshConfig, document.get("mesh"), "mesh"),
    )


def load_run_config(path: Union[str, Path, None], config_dir: Union[str, Path] = "config") -> RunConfig:
    """读取 YAML 运行配置；文件缺失时告警并使用默认值"""
    return run_config_from_dict(ConfigLoader(config_dir).load(path))


def run_config_to_dict(config: RunConfig) -> Dict[str, Any]:
    plain = to_plain(config)
    plain["hash_grid"] = plain["field"].pop("hash_grid")
    return plain
