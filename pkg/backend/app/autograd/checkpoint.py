"""PTNT checkpoint files: named float64 tensors, little-endian.

Layout::

    b"PTNT" | u32 version | u32 count
    per tensor: u32 name_len | name (utf-8) | u32 rank | rank x u32 dims | f64 payload
"""
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from app.exceptions import FormatError
from app.utils.file_utils import atomic_write_bytes

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PTNT"
CHECKPOINT_VERSION = 1

_U32 = struct.Struct("<I")


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray]) -> Path:
    parts = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION), _U32.pack(len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(array.ndim))
        parts.extend(_U32.pack(d) for d in array.shape)
        parts.append(np.ascontiguousarray(array).tobytes())
    payload = b"".join(parts)
    atomic_write_bytes(path, payload)
    logger.info(f"Saved checkpoint with {len(tensors)} tensors ({len(payload)} bytes) to {path}")
    return Path(path)


def load_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise FormatError(
                f"{path}: truncated while reading {what} (need {n} bytes at offset {offset}, file has {len(raw)})"
            )
        chunk = raw[offset:offset + n]
        offset += n
        return chunk

    def u32(what: str) -> int:
        return _U32.unpack(take(4, what))[0]

    magic = take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    count = u32("tensor count")

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for i in range(count):
        name = take(u32(f"name length of tensor {i}"), f"name of tensor {i}").decode("utf-8")
        rank = u32(f"rank of {name}")
        shape = tuple(u32(f"shape of {name}") for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * size, f"payload of {name}"), dtype="<f8")
        tensors[name] = data.reshape(shape).astype(np.float64)
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after {count} tensors")
    logger.debug(f"Loaded {count} tensors from {path}")
    return tensors
