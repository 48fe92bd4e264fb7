"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DMN1"  u32 version
    u32 len, UTF-8 run config (key=value text)
    tensor table: u32 count, then per entry
        u32 name_len, name, u8 dtype tag (1 = float32), u32 rank,
        rank x u32 dims, raw little-endian float32 data
    u8 has_optimizer
    [u64 adam step, tensor table with entries "m.<param>" and "v.<param>"]
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .config import RunConfig
from .model import DMNetWeights
from .training import AdamState

MAGIC = b"DMN1"
VERSION = 1
F32_TAG = 1


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: Optional[AdamState] = None

    @classmethod
    def capture(cls, config: RunConfig, weights: DMNetWeights,
                state: Optional[AdamState] = None) -> "Checkpoint":
        tensors = {name: t.data.copy() for name, t in weights.named_parameters()}
        opt = None
        if state is not None:
            opt = AdamState({k: v.copy() for k, v in state.m.items()},
                            {k: v.copy() for k, v in state.v.items()}, state.step)
        return cls(config, tensors, opt)

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<I", VERSION)]
        cfg = self.config.to_text().encode("utf-8")
        out += [struct.pack("<I", len(cfg)), cfg]
        out.append(_pack_table(self.tensors))
        if self.optimizer is None:
            out.append(b"\x00")
        else:
            table = {f"m.{k}": v for k, v in self.optimizer.m.items()}
            table.update({f"v.{k}": v for k, v in self.optimizer.v.items()})
            out += [b"\x01", struct.pack("<Q", self.optimizer.step), _pack_table(table)]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes, origin: str = "<bytes>") -> "Checkpoint":
        r = _Reader(buf, origin)
        if r.take(4) != MAGIC:
            raise ValueError(f"{origin}: not a DMNet checkpoint (bad magic)")
        version = r.u32()
        if version != VERSION:
            raise ValueError(f"{origin}: unsupported checkpoint version {version}")
        config = RunConfig.parse(r.take(r.u32()).decode("utf-8"), origin)
        tensors = _read_table(r)
        opt = None
        if r.take(1) == b"\x01":
            step = struct.unpack("<Q", r.take(8))[0]
            table = _read_table(r)
            opt = AdamState({k[2:]: v for k, v in table.items() if k.startswith("m.")},
                            {k[2:]: v for k, v in table.items() if k.startswith("v.")}, step)
        if r.pos != len(buf):
            raise ValueError(f"{origin}: {len(buf) - r.pos} trailing bytes")
        return cls(config, tensors, opt)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes(), str(path))

    def build_weights(self) -> DMNetWeights:
        weights = DMNetWeights.init(self.config.model_config(), seed=0)
        load_into(weights, self.tensors)
        return weights


def load_into(weights: DMNetWeights, tensors: Dict[str, np.ndarray]) -> None:
    """Copy ``tensors`` into ``weights``; names and shapes must match in order."""
    named = weights.named_parameters()
    names = list(tensors)
    for i, (name, t) in enumerate(named):
        if i >= len(names) or names[i] != name:
            got = names[i] if i < len(names) else "<end of checkpoint>"
            raise ValueError(f"checkpoint does not match model: expected tensor {name!r}, found {got!r}")
        if tensors[name].shape != t.shape:
            raise ValueError(f"checkpoint does not match model: tensor {name!r} has shape "
                             f"{tensors[name].shape}, model expects {t.shape}")
    if len(names) > len(named):
        raise ValueError(f"checkpoint does not match model: unexpected tensor {names[len(named)]!r}")
    for name, t in named:
        t.data[...] = tensors[name]


def _pack_table(table: Dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(table))]
    for name, arr in table.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out += [struct.pack("<I", len(raw)), raw, struct.pack("<BI", F32_TAG, arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    return b"".join(out)


def _read_table(r: "_Reader") -> Dict[str, np.ndarray]:
    table = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        tag, rank = struct.unpack("<BI", r.take(5))
        if tag != F32_TAG:
            raise ValueError(f"{r.origin}: tensor {name!r} has unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)
        table[name] = data
    return table


class _Reader:
    def __init__(self, buf: bytes, origin: str):
        self.buf, self.pos, self.origin = buf, 0, origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError(f"{self.origin}: truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]
