"""Binary checkpoint container.

Layout (little-endian)::

    b"SHAT" | u32 version=1 | u32 tensor_count
    per tensor: u32 name_length | UTF-8 name | u32 rank | rank x u32 dims | float32 data
    u32 CRC-32 of every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from ..autodiff import Tensor

MAGIC = b"SHAT"
VERSION = 1

PathLike = Union[str, Path]


class CheckpointError(ValueError):
    """Base class for unreadable checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class DuplicateNameError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def encode(tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if n < 0 or pos + n > len(view):
            raise TruncatedFileError(f"file ends inside {what} (needs {n} bytes at offset {pos})")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise BadMagicError("not a checkpoint: bad magic bytes")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        raw = bytes(take(name_len, "tensor name"))
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ChecksumError("tensor name is not valid UTF-8") from exc
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        numel = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * numel, f"data of {name!r}"), dtype="<f4").reshape(dims)
        if name in out:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        out[name] = data.astype(np.float32)
    (stored,) = struct.unpack("<I", take(4, "checksum"))
    if pos != len(view):
        raise ChecksumError(f"{len(view) - pos} trailing bytes after checksum")
    if zlib.crc32(view[:pos - 4]) != stored:
        raise ChecksumError("CRC-32 mismatch")
    return out


def save_checkpoint(params: Mapping[str, Union[Tensor, np.ndarray]], path: PathLike) -> None:
    Path(path).write_bytes(encode(params))


def load_checkpoint(path: PathLike, requires_grad: bool = True) -> dict[str, Tensor]:
    arrays = decode(Path(path).read_bytes())
    return {k: Tensor(v, requires_grad=requires_grad, dtype=np.float32) for k, v in arrays.items()}


def load_arrays(path: PathLike) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
