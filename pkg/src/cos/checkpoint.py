"""Named-tensor binary checkpoints.

Layout, all integers little-endian:

    magic    8 bytes  b"COSCKPT1"
    version  u32      currently 1
    count    u32      number of tensors
    table    count entries of:
        name_len u32, name  utf-8 bytes
        dtype    u32       0 = float32 (the only code)
        rank     u32, dims u32 x rank
        offset   u64       byte offset into the payload
    payload_len u64
    payload     raw little-endian float32 data

Tensors are stored at 32-bit precision; loading reproduces the stored bits
exactly. Offsets are validated to be in-bounds and non-overlapping so a
corrupted table cannot alias two tensors onto the same bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from cos.assembly import BridgeParams, CosConfig, init_bridge
from cos.numerics import Tensor

MAGIC = b"COSCKPT1"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(ValueError):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray | Tensor]) -> None:
    """Write a name -> array mapping, downcasting payloads to float32."""
    if not tensors:
        raise CheckpointError("refusing to write a checkpoint with no tensors")
    table = bytearray()
    payload = bytearray()
    for name, value in tensors.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(data, dtype="<f4")
        raw = arr.tobytes()
        encoded = name.encode("utf-8")
        table += struct.pack("<I", len(encoded)) + encoded
        table += struct.pack("<II", DTYPE_F32, arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<Q", len(payload))
        payload += raw
    blob = (
        MAGIC
        + struct.pack("<II", VERSION, len(tensors))
        + bytes(table)
        + struct.pack("<Q", len(payload))
        + bytes(payload)
    )
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as float32 arrays, validating the layout."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"bad magic, not a checkpoint: {path}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    count = r.u32()

    entries = []
    names = set()
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        if name in names:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        names.add(name)
        dtype = r.u32()
        if dtype != DTYPE_F32:
            raise CheckpointError(f"unknown dtype code {dtype} for {name!r}")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        offset = r.u64()
        entries.append((name, dims, offset))

    payload_len = r.u64()
    payload = r.take(payload_len)
    if r.pos != len(r.blob):
        raise CheckpointError(f"{len(r.blob) - r.pos} trailing bytes after payload")

    spans = []
    for name, dims, offset in entries:
        nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if dims else 4
        if offset + nbytes > payload_len:
            raise CheckpointError(
                f"tensor {name!r} spans [{offset}, {offset + nbytes}) "
                f"outside the {payload_len}-byte payload"
            )
        spans.append((offset, offset + nbytes, name))
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise CheckpointError(f"tensors {name_a!r} and {name_b!r} overlap in the payload")

    out = {}
    for name, dims, offset in entries:
        nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if dims else 4
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(dims)
        out[name] = arr.copy()
    return out


def save_bridge(path: str | Path, params: BridgeParams) -> None:
    save_tensors(path, params.named_tensors())


def load_bridge(path: str | Path, cfg: CosConfig) -> BridgeParams:
    """Rebuild bridge parameters for cfg from a checkpoint.

    Every tensor the config calls for must be present with the right shape,
    and no stray tensors may remain.
    """
    stored = load_tensors(path)
    params = init_bridge(cfg, np.random.default_rng(0))
    for name, slot in params.named_tensors().items():
        if name not in stored:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = stored.pop(name)
        if arr.shape != slot.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, config wants {slot.shape}"
            )
        slot.assign(arr.astype(np.float64))
    if stored:
        raise CheckpointError(f"checkpoint has unexpected tensors: {sorted(stored)}")
    return params
