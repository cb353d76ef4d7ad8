"""SGM1 parameter files: magic, u32 header length, JSON header, f32 tensors."""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .._io import atomic_write_bytes, check_magic, unpack_u32
from ..errors import FormatError
from .config import ModelConfig
from .model import Params, param_shapes

SGM_MAGIC = b"SGM1"


def params_to_bytes(params: Params, cfg: ModelConfig) -> bytes:
    expected = param_shapes(cfg)
    if [n for n, _ in expected] != list(params):
        raise FormatError("parameter names/order do not match the model config")
    header = {
        "config": dataclasses.asdict(cfg),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n, _ in expected],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(params[n], dtype="<f4").tobytes() for n, _ in expected)
    return SGM_MAGIC + struct.pack("<I", len(blob)) + blob + body


def params_from_bytes(data: bytes, dtype=np.float32) -> tuple[Params, ModelConfig]:
    check_magic(data, SGM_MAGIC, "model")
    (hlen,) = unpack_u32(data, 4, 1, "model")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
        cfg = ModelConfig(**header["config"])
        tensors = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"model: bad header: {exc}") from exc
    expected = param_shapes(cfg)
    if [(t["name"], tuple(t["shape"])) for t in tensors] != expected:
        raise FormatError("model: tensor list does not match its config")
    offset = 8 + hlen
    params: Params = {}
    for name, shape in expected:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(data):
            raise FormatError("model: truncated tensor data")
        params[name] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).astype(dtype)
        offset = end
    if offset != len(data):
        raise FormatError("model: trailing bytes after tensors")
    return params, cfg


def save_params(params: Params, cfg: ModelConfig, path: str | Path) -> None:
    atomic_write_bytes(path, params_to_bytes(params, cfg))


def load_params(path: str | Path, dtype=np.float32) -> tuple[Params, ModelConfig]:
    return params_from_bytes(Path(path).read_bytes(), dtype)
