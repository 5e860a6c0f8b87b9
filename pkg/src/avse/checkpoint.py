"""Checkpoint serialization.

Binary layout (little-endian): magic "AVSE", format version u32, blob count
u32; then per blob: name length u16, UTF-8 name, rank u8, dims as u32s, and
the payload as 32-bit IEEE-754 values. Batch-norm running statistics live
under the reserved name prefix "bn/".
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AVSE"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable or malformed checkpoint file."""


def write_checkpoint(path, blobs: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blobs)))
        for name in sorted(blobs):
            arr = np.asarray(blobs[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset = 12
    blobs: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            blobs[name] = arr.reshape(dims).astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if len(blobs) != count:
        raise CheckpointError(f"{path}: duplicate blob names")
    return blobs
