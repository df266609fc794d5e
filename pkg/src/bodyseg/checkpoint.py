"""Binary checkpoint serialization.

Layout (all integers little-endian):

* magic bytes ``BSEG1``
* u32 format version (currently 1)
* repeated records, one per named array:
  u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, raw float32 data.

Every trainable parameter, batch-norm running statistic and dropout logit
is stored, always in the same order, so identical models serialize to
byte-identical files.  Values are stored at 32-bit precision; loading
restores them into the model's float64 arrays.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import SegNet

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"BSEG1"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, truncated or architecturally incompatible checkpoint."""


def save_checkpoint(model: SegNet, path) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in model.named_entries():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))


def _read_exact(buf: bytes, offset: int, count: int) -> tuple[bytes, int]:
    end = offset + count
    if end > len(buf):
        raise CheckpointError("truncated checkpoint")
    return buf[offset:end], end


def _parse_records(buf: bytes) -> dict[str, np.ndarray]:
    head, offset = _read_exact(buf, 0, len(MAGIC))
    if head != MAGIC:
        raise CheckpointError("not a checkpoint")
    raw, offset = _read_exact(buf, offset, 4)
    version = struct.unpack("<I", raw)[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    entries: dict[str, np.ndarray] = {}
    while offset < len(buf):
        raw, offset = _read_exact(buf, offset, 2)
        name_len = struct.unpack("<H", raw)[0]
        raw, offset = _read_exact(buf, offset, name_len)
        name = raw.decode("utf-8")
        raw, offset = _read_exact(buf, offset, 1)
        ndim = raw[0]
        raw, offset = _read_exact(buf, offset, 4 * ndim)
        dims = struct.unpack(f"<{ndim}I", raw)
        count = int(np.prod(dims)) if ndim else 1
        raw, offset = _read_exact(buf, offset, 4 * count)
        data = np.frombuffer(raw, dtype="<f4").reshape(dims)
        if name in entries:
            raise CheckpointError(f"duplicate entry {name!r}")
        entries[name] = data
    return entries


def load_checkpoint(path) -> SegNet:
    """Reconstruct a model, verifying the stored shapes against the
    architecture before accepting any values."""
    buf = Path(path).read_bytes()
    entries = _parse_records(buf)
    model = SegNet()
    expected = dict(model.named_entries())
    missing = set(expected) - set(entries)
    extra = set(entries) - set(expected)
    if missing or extra:
        detail = ", ".join(sorted(missing | extra))
        raise CheckpointError(f"architecture mismatch: unexpected entry set ({detail})")
    for name, arr in entries.items():
        target = expected[name]
        if arr.shape != target.shape:
            raise CheckpointError(
                f"architecture mismatch: {name} has dims {arr.shape}, expected {target.shape}"
            )
        target[...] = arr.astype(np.float64)
    return model
