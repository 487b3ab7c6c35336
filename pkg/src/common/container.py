#!/usr/bin/env python3
"""
版本化二进制容器（场检查点 SHG1 与去噪器检查点 DEN1 共用）

文件布局（全部小端）:
    magic        4 字节，例如 b"SHG1"
    version      uint32
    header_len   uint32
    header       UTF-8 JSON，包含 meta 与张量清单
                 tensors: [{"name", "dtype", "shape", "offset", "nbytes"}]
    payload      按清单顺序拼接的原始张量字节，offset 相对 payload 起点

张量字节按 dtype 的小端表示原样写出，读回后逐位一致
"""
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np
import torch

from .errors import CheckpointFormatError
from .helpers import atomic_write_bytes

CONTAINER_VERSION = 1

_TORCH_TO_NUMPY = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
}
_NUMPY_TO_TORCH = {v: k for k, v in _TORCH_TO_NUMPY.items()}


def encode_container(magic: bytes, meta: Mapping[str, Any],
                     tensors: Mapping[str, torch.Tensor]) -> bytes:
    if len(magic) != 4:
        raise CheckpointFormatError("magic 必须为4字节", {"magic": magic})

    manifest = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        if tensor.dtype not in _TORCH_TO_NUMPY:
            raise CheckpointFormatError(f"不支持的张量类型: {tensor.dtype}", {"name": name})
        dtype = _TORCH_TO_NUMPY[tensor.dtype]
        raw = np.ascontiguousarray(tensor.detach().cpu().numpy()).astype(dtype, copy=False).tobytes()
        manifest.append({
            "name": name,
            "dtype": dtype,
            "shape": list(tensor.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)

    header = json.dumps({"meta": dict(meta), "tensors": manifest}, sort_keys=True).encode("utf-8")
    return b"".join([magic, struct.pack("<II", CONTAINER_VERSION, len(header)), header] + chunks)


def decode_container(payload: bytes, magic: bytes) -> Tuple[Dict[str, Any], "OrderedDict[str, torch.Tensor]"]:
    if payload[:4] != magic:
        raise CheckpointFormatError("magic 不匹配", {"expected": magic, "found": payload[:4]})
    if len(payload) < 12:
        raise CheckpointFormatError("文件头不完整")

    version, header_len = struct.unpack("<II", payload[4:12])
    if version != CONTAINER_VERSION:
        raise CheckpointFormatError("容器版本不受支持", {"version": version})

    header_end = 12 + header_len
    try:
        header = json.loads(payload[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError("文件头JSON损坏") from e

    body = payload[header_end:]
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for entry in header["tensors"]:
        start, end = entry["offset"], entry["offset"] + entry["nbytes"]
        if end > len(body):
            raise CheckpointFormatError("张量数据被截断", {"name": entry["name"]})
        array = np.frombuffer(body[start:end], dtype=entry["dtype"]).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(array.copy()).to(_NUMPY_TO_TORCH[entry["dtype"]])
    return header["meta"], tensors


def write_container(path: Union[str, Path], magic: bytes, meta: Mapping[str, Any],
                    tensors: Mapping[str, torch.Tensor]) -> Path:
    return atomic_write_bytes(path, encode_container(magic, meta, tensors))


def read_container(path: Union[str, Path], magic: bytes):
    target = Path(path)
    if not target.exists():
        raise CheckpointFormatError(f"检查点不存在: {target}")
    return decode_container(target.read_bytes(), magic)
