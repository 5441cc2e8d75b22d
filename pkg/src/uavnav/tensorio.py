"""Flat binary tensor container used for checkpoints and memory snapshots.

Layout (all integers little-endian)::

    magic    4 bytes  b"UVTC"
    version  uint32   (1)
    count    uint32
    count x {
        name_len uint32, name utf-8 bytes,
        rank     uint32, dims uint64 * rank,
        data     float64 little-endian, C order
    }
"""
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UVTC"
VERSION = 1


class TensorFileError(ValueError):
    pass


def dumps(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d arrays 0-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise TensorFileError("bad magic")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
            off += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise TensorFileError(f"truncated tensor file: {exc}") from exc
    return out


def save(path, tensors: dict) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict:
    return loads(Path(path).read_bytes())
