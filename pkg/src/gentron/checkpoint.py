"""Binary checkpoint format.

Layout, all integers little-endian::

    b"GTRNCKPT"                      8-byte magic
    u32 version                      currently 1
    u32 tensor count
    per tensor:
        u16 name length, name bytes (UTF-8)
        u8 rank, u32 dims[rank]
        f32 payload, row-major
    u32 config length, config bytes  UTF-8 JSON snapshot

Optimizer moments are stored as ordinary tensors named ``optim.m.<param>``
and ``optim.v.<param>``; the step counter lives in the JSON snapshot.
"""
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from gentron.errors import (
    CheckpointHeaderError,
    CheckpointShapeError,
    CheckpointTruncatedError,
)

MAGIC = b"GTRNCKPT"
VERSION = 1
OPTIM_PREFIX = "optim."


@dataclass
class Checkpoint:
    tensors: dict
    config: dict
    version: int = VERSION

    @property
    def inflated(self):
        return bool(self.config.get("inflated", False))

    def model_tensors(self):
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX)}


def build_checkpoint(model, optimizer=None, extra=None):
    tensors = {name: np.asarray(p.data, dtype=np.float32) for name, p in model.named_parameters()}
    config = {"format": "gentron", "model": model.cfg.to_dict(), "inflated": model.inflated}
    if optimizer is not None:
        for name, (m, v) in optimizer.moments.items():
            tensors[f"{OPTIM_PREFIX}m.{name}"] = np.asarray(m, dtype=np.float32)
            tensors[f"{OPTIM_PREFIX}v.{name}"] = np.asarray(v, dtype=np.float32)
        config["optimizer"] = optimizer.state_config()
    if extra:
        config.update(extra)
    return Checkpoint(tensors, config)


def save_checkpoint(model_or_ckpt, path, optimizer=None, extra=None):
    ckpt = model_or_ckpt if isinstance(model_or_ckpt, Checkpoint) else build_checkpoint(
        model_or_ckpt, optimizer, extra
    )
    parts = [MAGIC, struct.pack("<II", VERSION, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    raw_cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(raw_cfg)))
    parts.append(raw_cfg)

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)
    return ckpt


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint truncated while reading {what} (need {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf)})"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointHeaderError(f"bad magic {magic!r}; not a gentron checkpoint")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointHeaderError(f"unsupported checkpoint version {version}")

    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointHeaderError(f"tensor name is not UTF-8: {exc}") from None
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        n = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * n, f"payload of {name}")
        if name in tensors:
            raise CheckpointHeaderError(f"duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)

    (cfg_len,) = r.unpack("<I", "config length")
    raw_cfg = r.take(cfg_len, "config snapshot")
    try:
        config = json.loads(raw_cfg.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointHeaderError(f"config snapshot is not valid JSON: {exc}") from None
    if r.pos != len(buf):
        raise CheckpointHeaderError(f"{len(buf) - r.pos} trailing bytes after the config snapshot")
    if not isinstance(config, dict) or "model" not in config:
        raise CheckpointHeaderError("config snapshot lacks a model section")
    return Checkpoint(tensors, config, version)


def model_from_checkpoint(ckpt, expect_inflated=None):
    """Rebuild a model and copy weights in, validating the shape table first.

    ``expect_inflated=False`` is the strict T2I constructor: a T2V checkpoint
    then fails with CheckpointShapeError because of its extra temporal tensors.
    """
    from gentron.model import GenTron, GenTronConfig
    from gentron.nn import ParamFactory
    from gentron.video import attach_temporal_layers

    if isinstance(ckpt, (str, os.PathLike)):
        ckpt = load_checkpoint(ckpt)
    try:
        cfg = GenTronConfig.from_dict(ckpt.config["model"])
    except (TypeError, ValueError) as exc:
        raise CheckpointHeaderError(f"invalid model config in checkpoint: {exc}") from None
    inflated = ckpt.inflated if expect_inflated is None else expect_inflated
    model = GenTron(cfg)
    if inflated:
        attach_temporal_layers(model, ParamFactory())

    expected = {name: p.shape for name, p in model.named_parameters()}
    stored = {name: arr.shape for name, arr in ckpt.model_tensors().items()}
    missing = sorted(set(expected) - set(stored))
    unexpected = sorted(set(stored) - set(expected))
    wrong = sorted(n for n in set(expected) & set(stored) if expected[n] != stored[n])
    if missing or unexpected or wrong:
        raise CheckpointShapeError(
            "checkpoint does not match the model shape table: "
            f"missing={missing[:5]} unexpected={unexpected[:5]} wrong_shape={wrong[:5]}"
        )
    for name, p in model.named_parameters():
        p.data[...] = ckpt.tensors[name]
    return model


def optimizer_from_checkpoint(ckpt, model):
    from gentron.trainer import AdamW

    opt_cfg = ckpt.config.get("optimizer")
    if opt_cfg is None:
        return None
    opt = AdamW.from_state_config(model, opt_cfg)
    for name in opt.moments:
        opt.moments[name] = (
            ckpt.tensors[f"{OPTIM_PREFIX}m.{name}"].copy(),
            ckpt.tensors[f"{OPTIM_PREFIX}v.{name}"].copy(),
        )
    return opt
