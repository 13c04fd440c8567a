"""Binary container shared by every trained model.

Layout (little-endian): magic, version, kind tag, JSON hyperparameter
block, tensor count, then per tensor (name, shape, float64 data), and a
trailing CRC32 over everything before it.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .ingest import FormatError

MAGIC = b"TACKPT\x00\x00"
VERSION = 1


def _pack_str(s: str, width: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<" + width, len(b)) + b


def dumps(kind: str, hyper: dict, tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(kind, "H")]
    parts.append(_pack_str(json.dumps(hyper, sort_keys=True, separators=(",", ":")), "I"))
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        parts.append(_pack_str(name, "H"))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save(path, kind: str, hyper: dict, tensors: dict) -> None:
    Path(path).write_bytes(dumps(kind, hyper, tensors))


class _Reader:
    def __init__(self, buf, where):
        self.buf, self.pos, self.where = buf, 0, where

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.where}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))


def loads(raw: bytes, where="<bytes>"):
    """Return (kind, hyper, tensors); raises FormatError on any defect."""
    if len(raw) < len(MAGIC) + 8:
        raise FormatError(f"{where}: truncated checkpoint")
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{where}: not a checkpoint (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{where}: checksum mismatch (corrupt or truncated)")
    r = _Reader(body, where)
    r.take(len(MAGIC))
    (version,) = r.unpack("I")
    if version != VERSION:
        raise FormatError(f"{where}: unsupported checkpoint version {version}")
    (n,) = r.unpack("H")
    kind = r.take(n).decode("utf-8")
    (n,) = r.unpack("I")
    hyper = json.loads(r.take(n).decode("utf-8"))
    (count,) = r.unpack("I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("H")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("I")
        shape = r.unpack(f"{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(shape)
    if r.pos != len(body):
        raise FormatError(f"{where}: trailing bytes after tensors")
    return kind, hyper, tensors


def load(path):
    return loads(Path(path).read_bytes(), str(path))
