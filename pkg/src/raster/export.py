#!/usr/bin/env python3
"""
条件图与渲染结果导出
语义图: 8位索引PNG + JSON调色板；深度: PFM（32位浮点，小端，比例头 -1.0）；掩码: 8位PNG {0,255}
"""
import json
import re
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from PIL import Image

from src.common.errors import CheckpointFormatError
from src.common.helpers import atomic_write_bytes, atomic_write_text

from .rasterizer import ConditionMaps

PathLike = Union[str, Path]


def save_semantic_png(semantic: np.ndarray, palette: Dict[int, Tuple[int, int, int]], path: PathLike) -> Path:
    if semantic.min() < 0 or semantic.max() > 255:
        raise ValueError("索引PNG只支持0-255的类别id")
    image = Image.fromarray(semantic.astype(np.uint8), mode="P")
    flat = [0] * (256 * 3)
    for class_id, color in palette.items():
        flat[3 * class_id:3 * class_id + 3] = list(color)
    image.putpalette(flat)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    image.save(target)
    atomic_write_text(target.with_suffix(".json"),
                      json.dumps({str(k): list(v) for k, v in sorted(palette.items())}, indent=2))
    return target


def save_mask_png(mask: np.ndarray, path: PathLike) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(target)
    return target


def save_color_png(color: np.ndarray, path: PathLike) -> Path:
    """color: (H, W, 3)，取值 [0, 1]"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(color, 0.0, 1.0) * 255.0).astype(np.uint8), mode="RGB").save(target)
    return target


def save_pfm(depth: np.ndarray, path: PathLike) -> Path:
    """PFM 单通道；负比例表示小端，数据行按自下而上存储"""
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    body = np.flipud(depth).astype("<f4").tobytes()
    return atomic_write_bytes(path, header + body)


def load_pfm(path: PathLike) -> np.ndarray:
    payload = Path(path).read_bytes()
    match = re.match(rb"(Pf|PF)\s+(\d+)\s+(\d+)\s+(-?[\d.]+)\s", payload)
    if match is None:
        raise CheckpointFormatError(f"不是有效的PFM文件: {path}")
    channels = 3 if match.group(1) == b"PF" else 1
    width, height, scale = int(match.group(2)), int(match.group(3)), float(match.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload[match.end():], dtype=dtype, count=width * height * channels)
    shape = (height, width, channels) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def export_condition_maps(maps: ConditionMaps, palette: Dict[int, Tuple[int, int, int]],
                          out_dir: PathLike, stem: str) -> Dict[str, Path]:
    out = Path(out_dir)
    return {
        "semantic": save_semantic_png(maps.semantic, palette, out / f"{stem}_semantic.png"),
        "depth": save_pfm(maps.depth, out / f"{stem}_depth.pfm"),
        "sky": save_mask_png(maps.sky, out / f"{stem}_sky.png"),
    }
