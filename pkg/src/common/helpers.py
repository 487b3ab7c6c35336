#!/usr/bin/env python3
"""通用工具函数：随机数、原子写文件、张量转换"""
import os
import random
import tempfile
from pathlib import Path
from typing import List, Union

import numpy as np
import torch


def seed_everything(seed: int) -> None:
    """固定所有随机源"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def make_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def split_seeds(seed: int, count: int) -> List[int]:
    """
    把一个种子拆分为 count 个独立子种子

    渲染按固定大小的光线块使用子种子，结果与调度顺序无关
    """
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0] % (2 ** 63 - 1)) for child in children]


def atomic_write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    """先写临时文件再重命名，避免中断留下半个文件"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return target


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def to_numpy(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy()
