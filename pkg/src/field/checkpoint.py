#!/usr/bin/env python3
"""
场检查点 (magic "SHG1")

容器格式见 src/common/container.py。meta 记录:
    config        FieldConfig（含哈希网格超参数）
    stuff_tiles   背景网格格子列表 [[i, j, k], ...]
    objects       [{"id", "rotation", "translation", "size"}]
    dtype         参数精度
张量命名: "stuff/<i_j_k>/<参数名>"、"object/<id>/<参数名>"、"sky/<参数名>"
"""
from dataclasses import asdict
from pathlib import Path
from typing import Union

import torch

from src.common.container import read_container, write_container
from src.common.errors import CheckpointFormatError
from src.common.logger import get_logger
from src.layout.primitives import Pose

from .scene_field import FieldConfig, SceneField

logger = get_logger(__name__)

FIELD_MAGIC = b"SHG1"
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def field_to_tensors(field: SceneField):
    tensors = {}
    for key, grid in sorted(field.stuff_grids.items()):
        for name, value in grid.state_dict().items():
            tensors[f"stuff/{key}/{name}"] = value
    for key, grid in sorted(field.object_grids.items(), key=lambda item: int(item[0])):
        for name, value in grid.state_dict().items():
            tensors[f"object/{key}/{name}"] = value
    for name, value in field.sky.state_dict().items():
        tensors[f"sky/{name}"] = value
    return tensors


def save_field(field: SceneField, path: Union[str, Path]) -> Path:
    meta = {
        "config": asdict(field.config),
        "stuff_tiles": [list(tile) for tile in field.tiles()],
        "objects": [
            {
                "id": instance_id,
                "rotation": field.object_pose(instance_id).rotation.tolist(),
                "translation": field.object_pose(instance_id).translation.tolist(),
                "size": field.object_pose(instance_id).size.tolist(),
            }
            for instance_id in field.object_ids()
        ],
        "dtype": str(field.dtype).replace("torch.", ""),
    }
    target = write_container(path, FIELD_MAGIC, meta, field_to_tensors(field))
    logger.info(f"场检查点已保存: {target} ({len(field.stuff_grids)} 背景网格, {len(field.object_grids)} 物体网格)")
    return target


def load_field(path: Union[str, Path]) -> SceneField:
    meta, tensors = read_container(path, FIELD_MAGIC)
    try:
        config = FieldConfig(**meta["config"])
        dtype = _DTYPES[meta["dtype"]]
        field = SceneField(config).to(dtype)
        for tile in meta["stuff_tiles"]:
            field.spawn_stuff_grid(tile)
        for entry in meta["objects"]:
            pose = Pose(entry["rotation"], entry["translation"], entry["size"])
            field.attach_object_grid(int(entry["id"]), pose)
    except (KeyError, TypeError) as e:
        raise CheckpointFormatError("场检查点 meta 不完整", {"error": str(e)}) from e

    groups = {"stuff": {}, "object": {}, "sky": {}}
    for name, value in tensors.items():
        kind, _, rest = name.partition("/")
        if kind not in groups:
            raise CheckpointFormatError(f"未知张量: {name}")
        if kind == "sky":
            groups["sky"][rest] = value
        else:
            owner, _, param = rest.partition("/")
            groups[kind].setdefault(owner, {})[param] = value

    try:
        field.sky.load_state_dict(groups["sky"])
        for key, state in groups["stuff"].items():
            field.stuff_grids[key].load_state_dict(state)
        for key, state in groups["object"].items():
            field.object_grids[key].load_state_dict(state)
    except (KeyError, RuntimeError) as e:
        raise CheckpointFormatError("场检查点张量与结构不一致", {"error": str(e)}) from e
    logger.info(f"场检查点已加载: {path}")
    return field
