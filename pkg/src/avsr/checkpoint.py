"""Versioned named-tensor checkpoint bundle.

Layout (all little-endian):
  magic "AVSRCKPT" | u32 format version | u32 config length + utf-8 key=value
  lines | u32 epoch | u32 stage | tensor group (parameters) | u8 optimizer
  flag | [f64 learning rate | u64 step | tensor group (first moments) |
  tensor group (second moments)]

A tensor group is u32 count, then per tensor: u16 name length + utf-8 name,
u32 rank, u32 dims, raw float64 payload. Entries are written in sorted name
order so save/load round-trips are bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .optim import AdamState

MAGIC = b"AVSRCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict[str, str] = field(default_factory=dict)
    epoch: int = 0
    stage: int = 0
    optimizer: AdamState | None = None


def _pack_group(tensors: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw_name)))
        out.append(raw_name)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_group(r: _Reader) -> dict[str, np.ndarray]:
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(8 * n)
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    config_text = "\n".join(f"{k}={v}" for k, v in sorted(ckpt.config.items())).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", len(config_text)),
        config_text,
        struct.pack("<II", ckpt.epoch, ckpt.stage),
        _pack_group(ckpt.params),
    ]
    if ckpt.optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        opt = ckpt.optimizer
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<d", opt.learning_rate))
        parts.append(struct.pack("<Q", opt.step))
        parts.append(_pack_group(opt.first_moment))
        parts.append(_pack_group(opt.second_moment))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"{path}: checkpoint format version {version}, expected {VERSION}")
    (cfg_len,) = r.unpack("<I")
    cfg_text = r.take(cfg_len).decode("utf-8")
    config = {}
    for line in cfg_text.splitlines():
        if line:
            k, _, v = line.partition("=")
            config[k] = v
    epoch, stage = r.unpack("<II")
    params = _read_group(r)
    (has_opt,) = r.unpack("<B")
    optimizer = None
    if has_opt:
        (lr,) = r.unpack("<d")
        (step,) = r.unpack("<Q")
        optimizer = AdamState(learning_rate=lr)
        optimizer.step = step
        optimizer.first_moment = _read_group(r)
        optimizer.second_moment = _read_group(r)
    if r.pos != len(raw):
        raise DataError(f"{path}: {len(raw) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(params=params, config=config, epoch=epoch, stage=stage, optimizer=optimizer)
