"""Binary block format shared by model matrices and corpus adjacency.

Layout: 16-byte header (8-byte magic, uint32 rows, uint32 cols, little
endian), raw payload bytes, trailing uint32 CRC32 of header + payload.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError

_HEADER = struct.Struct("<8sII")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write to a temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_block(path: str | Path, magic: bytes, rows: int, cols: int, payload: bytes) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    head = _HEADER.pack(magic, rows, cols)
    crc = zlib.crc32(head + payload) & 0xFFFFFFFF
    atomic_write_bytes(path, head + payload + struct.pack("<I", crc))


def read_block(path: str | Path, magic: bytes) -> tuple[int, int, bytes]:
    """Read and verify a block, returning (rows, cols, payload)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise FormatError(f"{path}: truncated file ({len(data)} bytes)")
    got_magic, rows, cols = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch")
    return rows, cols, data[_HEADER.size:-4]


def write_matrix(path: str | Path, magic: bytes, matrix: np.ndarray) -> None:
    """Row-major little-endian float32 matrix block."""
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    write_block(path, magic, mat.shape[0], mat.shape[1], mat.tobytes())


def read_matrix(path: str | Path, magic: bytes) -> np.ndarray:
    rows, cols, payload = read_block(path, magic)
    if len(payload) != rows * cols * 4:
        raise FormatError(f"{path}: payload size does not match {rows}x{cols} float32")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


def write_int_lists(path: str | Path, magic: bytes, lists: list[np.ndarray],
                    extra: list[np.ndarray] | None = None) -> None:
    """Ragged int lists as CSR offsets + values (+ optional parallel values)."""
    offsets = np.zeros(len(lists) + 1, dtype="<i8")
    offsets[1:] = np.cumsum([len(x) for x in lists])
    values = (np.concatenate(lists) if lists else np.array([], dtype=np.int64)).astype("<i8")
    payload = offsets.tobytes() + values.tobytes()
    ncols = 1
    if extra is not None:
        ev = (np.concatenate(extra) if extra else np.array([], dtype=np.int64)).astype("<i8")
        if len(ev) != len(values):
            raise ValueError("extra values must parallel the main values")
        payload += ev.tobytes()
        ncols = 2
    write_block(path, magic, len(lists), ncols, payload)


def read_int_lists(path: str | Path, magic: bytes) -> tuple[list[np.ndarray], list[np.ndarray] | None]:
    rows, cols, payload = read_block(path, magic)
    off_bytes = (rows + 1) * 8
    offsets = np.frombuffer(payload[:off_bytes], dtype="<i8")
    nnz = int(offsets[-1]) if rows else 0
    expected = off_bytes + nnz * 8 * cols
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size mismatch")
    values = np.frombuffer(payload[off_bytes:off_bytes + nnz * 8], dtype="<i8").astype(np.int64)
    lists = [values[offsets[i]:offsets[i + 1]].copy() for i in range(rows)]
    extra = None
    if cols == 2:
        ev = np.frombuffer(payload[off_bytes + nnz * 8:], dtype="<i8").astype(np.int64)
        extra = [ev[offsets[i]:offsets[i + 1]].copy() for i in range(rows)]
    return lists, extra
