"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic     4 bytes  b"XMCK"
    version   u16
    hdr_len   u32      length of the JSON header that follows
    header    utf-8 JSON {"config_hash", "config", "meta"}
    count     u32      number of named blocks
    block*    name_len u16, name utf-8, ndim u8, dims u32 * ndim,
              payload float32 little-endian, row-major

Values are stored as float32; a save/load/save cycle is byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"XMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def write_checkpoint(fh: BinaryIO, tensors: dict[str, np.ndarray], config: dict,
                     meta: dict | None = None) -> None:
    header = canonical_json({"config_hash": config_hash(config), "config": config,
                             "meta": meta or {}}).encode()
    fh.write(MAGIC)
    fh.write(struct.pack("<HI", VERSION, len(header)))
    fh.write(header)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw_name = name.encode()
        fh.write(struct.pack("<HB", len(raw_name), arr.ndim))
        fh.write(raw_name)
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(fh: BinaryIO) -> tuple[dict[str, np.ndarray], dict]:
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<HI", _read(fh, 6))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(_read(fh, hlen).decode())
    if header.get("config_hash") != config_hash(header.get("config")):
        raise CheckpointError("config hash does not match embedded config")
    (count,) = struct.unpack("<I", _read(fh, 4))
    tensors = {}
    for _ in range(count):
        nlen, ndim = struct.unpack("<HB", _read(fh, 3))
        name = _read(fh, nlen).decode()
        shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
        n = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(_read(fh, 4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    return tensors, header


def _read(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def dumps(tensors: dict[str, np.ndarray], config: dict, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    write_checkpoint(buf, tensors, config, meta)
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    return read_checkpoint(io.BytesIO(data))


def save(path: str | Path, tensors: dict[str, np.ndarray], config: dict, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, config, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return read_checkpoint(fh)
