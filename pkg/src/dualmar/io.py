"""Tensor container files, named-tensor checkpoints, PGM previews and run manifests.

Record layout (little-endian)::

    b"MTSR" | version u8 = 1 | dtype u8 (1 float32, 2 uint8 bitmask) | ndim u8
    | dims u32 * ndim | row-major payload

A checkpoint is a run of records followed by an index: ``count u32`` then per
entry ``name_len u16 | name (utf-8) | offset u64`` pointing at each record.
"""

from __future__ import annotations

import json
import os
import struct
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .errors import TensorFormatError

MAGIC = b"MTSR"
VERSION = 1
FLOAT32, BITMASK = 1, 2
_DTYPES = {FLOAT32: np.dtype("<f4"), BITMASK: np.dtype("u1")}


def _encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == bool:
        code, payload = BITMASK, arr.astype(np.uint8)
    else:
        code, payload = FLOAT32, arr.astype("<f4")
    if arr.ndim > 255:
        raise TensorFormatError("too many dimensions")
    head = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(payload).tobytes()


def _decode(buf: bytes, offset: int = 0):
    """Parse one record at ``offset``; returns ``(array, end_offset)``."""
    if buf[offset:offset + 4] != MAGIC:
        raise TensorFormatError(f"bad magic at offset {offset}")
    if len(buf) < offset + 7:
        raise TensorFormatError("truncated header")
    version, code, ndim = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    pos = offset + 7
    if len(buf) < pos + 4 * ndim:
        raise TensorFormatError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dt = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) < pos + nbytes:
        raise TensorFormatError("payload shorter than dims require")
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims)
    arr = arr.astype(bool) if code == BITMASK else arr.astype(np.float32)
    return arr, pos + nbytes


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_tensor(path, arr) -> None:
    _atomic_write(path, _encode(arr))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = _decode(buf)
    if end != len(buf):
        raise TensorFormatError(f"{len(buf) - end} trailing bytes after tensor")
    return arr


def write_named(path, tensors: dict) -> None:
    body, index = bytearray(), []
    for name, arr in tensors.items():
        index.append((name, len(body)))
        body += _encode(arr)
    tail = bytearray(struct.pack("<I", len(index)))
    for name, off in index:
        raw = name.encode("utf-8")
        tail += struct.pack("<H", len(raw)) + raw + struct.pack("<Q", off)
    _atomic_write(path, bytes(body + tail))


def read_named(path) -> dict:
    buf = Path(path).read_bytes()
    pos = 0
    while buf[pos:pos + 4] == MAGIC:
        _, pos = _decode(buf, pos)
    if len(buf) < pos + 4:
        raise TensorFormatError("missing named-tensor index")
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + n].decode("utf-8")
        (off,) = struct.unpack_from("<Q", buf, pos + 2 + n)
        pos += 2 + n + 8
        out[name], _ = _decode(buf, off)
    if pos != len(buf):
        raise TensorFormatError("trailing bytes after index")
    return out


def write_pgm(path, img_hu, center: float = 40.0, half_width: float = 80.0) -> None:
    """8-bit binary PGM of an HU slice in a ``center +- half_width`` window."""
    img = np.asarray(img_hu, dtype=np.float64)
    g = np.clip((img - (center - half_width)) / (2 * half_width), 0.0, 1.0)
    px = np.rint(g * 255).astype(np.uint8)
    h, w = px.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P5":
        raise TensorFormatError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise TensorFormatError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(path, command: str, config: dict, seeds: dict, extra: dict | None = None) -> None:
    doc = {"command": command, "config": config, "seeds": seeds, "git": git_describe()}
    if extra:
        doc.update(extra)
    _atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n").encode())
