"""Binary checkpoint: model config text plus named float32 blobs.

Layout (little-endian)::

    b"TSAM1"
    u32 config length, config bytes (UTF-8 ``key=value`` lines, sorted)
    u32 blob count
    per blob: u16 name length, name (UTF-8), u8 rank, rank x u32 dims, float32 data

Model parameters are stored under their dotted names, batch-norm buffers
under ``buffer:<name>``; callers may add extra blobs (optimizer moments) and
extra config keys (trainer state).
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .backbones import ModelConfig, SpeakerModel

MAGIC = b"TSAM1"
BUFFER_PREFIX = "buffer:"


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, config_text: str, blobs: "OrderedDict[str, np.ndarray]") -> None:
    out = bytearray(MAGIC)
    cfg = config_text.encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        key = name.encode("utf-8")
        out += struct.pack("<H", len(key)) + key
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4").tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(out))
    tmp.replace(path)


def read_checkpoint(path) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
    try:
        return _parse_body(data)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse_body(data: bytes) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    pos = 5
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    text = data[pos : pos + n].decode("utf-8")
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blobs: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + klen].decode("utf-8")
        pos += klen
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        blobs[name] = arr.astype(np.float32)
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes")
    return text, blobs


def split_config(text: str) -> tuple[str, dict[str, str]]:
    """Separate ``model.*`` config lines from everything else (trainer state)."""
    model_lines, extra = [], {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, val = line.split("=", 1)
        if key.startswith("model."):
            model_lines.append(f"{key[6:]}={val}")
        else:
            extra[key] = val
    return "\n".join(model_lines) + "\n", extra


def model_blobs(model: SpeakerModel) -> "OrderedDict[str, np.ndarray]":
    blobs: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, p in model.named_parameters().items():
        blobs[name] = p.data
    for name, b in model.named_buffers().items():
        blobs[BUFFER_PREFIX + name] = b
    return blobs


def save_model(path, model: SpeakerModel, extra: dict[str, str] | None = None, extra_blobs=None) -> None:
    lines = [f"model.{line}" for line in model.config.to_text().splitlines()]
    for key, val in sorted((extra or {}).items()):
        lines.append(f"{key}={val}")
    blobs = model_blobs(model)
    for name, arr in (extra_blobs or {}).items():
        blobs[name] = arr
    write_checkpoint(path, "\n".join(lines) + "\n", blobs)


def load_model(path) -> tuple[SpeakerModel, dict[str, str], "OrderedDict[str, np.ndarray]"]:
    """Rebuild a model; returns (model, extra config keys, non-model blobs)."""
    text, blobs = read_checkpoint(path)
    model_text, extra = split_config(text)
    cfg = ModelConfig.from_text(model_text)
    model = SpeakerModel(cfg)
    if "has_ams" in extra and extra["has_ams"] == "true":
        model.reset_ams_head()
    dtype = cfg.np_dtype
    params = model.named_parameters()
    for name, p in params.items():
        if name not in blobs:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if blobs[name].shape != p.shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {blobs[name].shape}, model expects {p.shape}")
        p.data = blobs.pop(name).astype(dtype)
    _load_buffers(model, blobs, dtype)
    return model, extra, blobs


def _load_buffers(model, blobs, dtype) -> None:
    for name in list(model.named_buffers()):
        key = BUFFER_PREFIX + name
        if key not in blobs:
            raise CheckpointError(f"missing buffer {name}")
        *path, attr = name.split(".")
        obj = model
        for part in path:
            obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
        setattr(obj, attr, blobs.pop(key).astype(dtype))
