"""Binary tensor container shared by probability maps, ensembles and datasets.

Layout (little-endian)::

    magic   4 bytes   b"BBNP" | b"BBNE" | b"BBNI"
    version u32
    count   u32
    count x { rank u32, dims u32[rank], data[prod(dims)] }

``BBNP`` (probability maps) and ``BBNI`` (evaluation tensors) store float32,
``BBNE`` (ensemble dumps) stores int8.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContainerFormatError

VERSION = 1

MAGIC_DTYPES = {
    b"BBNP": np.dtype("<f4"),
    b"BBNE": np.dtype("i1"),
    b"BBNI": np.dtype("<f4"),
}


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write ``payload`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode(magic: bytes, arrays: Sequence[np.ndarray]) -> bytes:
    dtype = MAGIC_DTYPES[magic]
    parts = [magic, struct.pack("<II", VERSION, len(arrays))]
    for arr in arrays:
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C"))
    return b"".join(parts)


def decode(payload: bytes, magic: bytes) -> list[np.ndarray]:
    dtype = MAGIC_DTYPES[magic]
    if len(payload) < 12:
        raise ContainerFormatError("file too short for container header")
    if payload[:4] != magic:
        raise ContainerFormatError(f"magic mismatch: expected {magic!r}, found {payload[:4]!r}")
    version, count = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise ContainerFormatError(f"unsupported container version {version}")
    offset = 12
    arrays = []
    try:
        for _ in range(count):
            (rank,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", payload, offset)
            offset += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            nbytes = n * dtype.itemsize
            if offset + nbytes > len(payload):
                raise ContainerFormatError("truncated tensor data")
            arr = np.frombuffer(payload, dtype=dtype, count=n, offset=offset).reshape(dims)
            offset += nbytes
            arrays.append(arr.copy())
    except struct.error as exc:
        raise ContainerFormatError(f"truncated container header: {exc}") from exc
    if offset != len(payload):
        raise ContainerFormatError("trailing bytes after last tensor")
    return arrays


def write_container(path, magic: bytes, arrays: Sequence[np.ndarray]) -> None:
    atomic_write_bytes(path, encode(magic, arrays))


def read_container(path, magic: bytes) -> list[np.ndarray]:
    return decode(Path(path).read_bytes(), magic)


def write_dataset(path, inputs: np.ndarray, labels: np.ndarray | None = None) -> None:
    """Evaluation set as ``BBNI``: inputs (N, C, H, W), then optional labels (N,)."""
    arrays = [np.asarray(inputs)]
    if labels is not None:
        arrays.append(np.asarray(labels))
    write_container(path, b"BBNI", arrays)


def read_dataset(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Integer inputs and labels (``None`` when the file holds no label tensor)."""
    arrays = read_container(path, b"BBNI")
    if not 1 <= len(arrays) <= 2:
        raise ContainerFormatError(f"dataset holds {len(arrays)} tensors, expected 1 or 2")
    x = arrays[0]
    if x.ndim != 4:
        raise ContainerFormatError(f"inputs must be rank 4 (N, C, H, W), got rank {x.ndim}")
    if not np.all(x == np.rint(x)):
        raise ContainerFormatError("inputs must hold integer activation codes")
    labels = None
    if len(arrays) == 2:
        labels = arrays[1]
        if labels.shape != (x.shape[0],) or not np.all(labels == np.rint(labels)):
            raise ContainerFormatError("labels must be one integer per input")
        labels = labels.astype(np.int64)
    return x.astype(np.int64), labels
