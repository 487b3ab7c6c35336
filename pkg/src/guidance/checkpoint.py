#!/usr/bin/env python3
"""
去噪器检查点 (magic "DEN1")

与场检查点共用容器格式。meta 记录 denoiser（结构参数）、schedule（调度参数）
以及可选的 adapter（LoRA 配置）；张量命名 "base/<参数名>"、"adapter/<参数名>"。
"""
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

from src.common.container import read_container, write_container
from src.common.errors import CheckpointFormatError
from src.common.logger import get_logger

from .adapter import AdaptedDenoiser, AdapterConfig
from .denoiser import DenoiserConfig, ToyDenoiser
from .schedule import NoiseSchedule, ScheduleConfig

logger = get_logger(__name__)

DENOISER_MAGIC = b"DEN1"


@dataclass
class DenoiserBundle:
    denoiser: ToyDenoiser
    schedule: NoiseSchedule
    adapter: Optional[AdaptedDenoiser] = None


def save_denoiser(denoiser: ToyDenoiser, schedule: NoiseSchedule, path: Union[str, Path],
                  adapter: Optional[AdaptedDenoiser] = None) -> Path:
    tensors = {f"base/{name}": value for name, value in denoiser.state_dict().items()}
    meta = {"denoiser": asdict(denoiser.config), "schedule": schedule.to_meta()}
    if adapter is not None:
        meta["adapter"] = asdict(adapter.config)
        for name, value in adapter.state_dict().items():
            if not name.startswith("base."):
                tensors[f"adapter/{name}"] = value
    target = write_container(path, DENOISER_MAGIC, meta, tensors)
    logger.info(f"去噪器检查点已保存: {target}")
    return target


def load_denoiser(path: Union[str, Path]) -> DenoiserBundle:
    meta, tensors = read_container(path, DENOISER_MAGIC)
    try:
        denoiser = ToyDenoiser(DenoiserConfig(**meta["denoiser"]))
        schedule = NoiseSchedule(ScheduleConfig(**meta["schedule"]))
    except (KeyError, TypeError) as e:
        raise CheckpointFormatError("去噪器检查点 meta 不完整", {"error": str(e)}) from e

    base_state = {k[len("base/"):]: v for k, v in tensors.items() if k.startswith("base/")}
    adapter_state = {k[len("adapter/"):]: v for k, v in tensors.items() if k.startswith("adapter/")}
    try:
        dtype = next(iter(base_state.values())).dtype
        denoiser = denoiser.to(dtype)
        denoiser.load_state_dict(base_state)
        adapter = None
        if "adapter" in meta:
            adapter = AdaptedDenoiser(denoiser, AdapterConfig(**meta["adapter"])).to(dtype)
            adapter_state.update({f"base.{k}": v for k, v in base_state.items()})
            adapter.load_state_dict(adapter_state)
    except (StopIteration, KeyError, RuntimeError, TypeError) as e:
        raise CheckpointFormatError("去噪器检查点张量与结构不一致", {"error": str(e)}) from e
    logger.info(f"去噪器检查点已加载: {path}")
    return DenoiserBundle(denoiser, schedule, adapter)
