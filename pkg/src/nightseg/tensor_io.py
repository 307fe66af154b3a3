"""Binary tensor files: magic "NFT1", u32 LE rank, u32 LE extents, f32 LE data."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = ["MAGIC", "write_tensor", "read_tensor", "encode_tensor", "decode_tensor"]

MAGIC = b"NFT1"


def encode_tensor(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    shape = arr.shape
    if any(s <= 0 for s in shape):
        raise ValueError(f"tensor extents must be positive, got {shape}")
    head = MAGIC + struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return head + payload


def decode_tensor(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r} at byte 0, expected {MAGIC!r}")
    if len(blob) < 8:
        raise ValueError("truncated header: missing rank at byte 4")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank == 0 or rank > 8:
        raise ValueError(f"unreasonable rank {rank} at byte 4")
    need = 8 + 4 * rank
    if len(blob) < need:
        raise ValueError(f"truncated header: missing extents at byte {len(blob)}")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    if any(s == 0 for s in shape):
        raise ValueError(f"zero extent in shape {shape}")
    count = int(np.prod(shape))
    if len(blob) != need + 4 * count:
        raise ValueError(
            f"payload length mismatch at byte {need}: have {len(blob) - need} bytes, need {4 * count}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=need, count=count)
    return data.reshape(shape).astype(np.float32)


def write_tensor(path: str | Path, t: Tensor | np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
