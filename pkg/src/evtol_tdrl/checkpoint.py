"""Binary weight container shared by the transformer and SAC networks.

Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header
(sorted keys), then every parameter as little-endian float64 in manifest order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolation

MAGIC = b"EVTLCKP1"
VERSION = 1


def encode(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    manifest = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = {"version": VERSION, "meta": meta, "manifest": manifest}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return MAGIC + struct.pack("<Q", len(head)) + head + body


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise ContractViolation("not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + n].decode())
    if header.get("version") != VERSION:
        raise ContractViolation(f"unsupported checkpoint version {header.get('version')}")
    offset = 16 + n
    arrays = {}
    for item in header["manifest"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise ContractViolation("checkpoint truncated")
        arrays[item["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise ContractViolation("trailing bytes after checkpoint payload")
    return arrays, header["meta"]


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    atomic_write(path, encode(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return decode(fh.read())
