"""MMCK checkpoint container.

Layout (all little-endian):
    magic b"MMCK" | u32 version | u32 manifest length | manifest JSON (utf-8)
    | float64 arrays, raw bytes, in manifest order

The manifest records parameter names and shapes plus an arbitrary JSON config
echo, so a checkpoint is self-describing.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensorcore import ParamStore

MAGIC = b"MMCK"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, store: ParamStore, config: dict) -> None:
    manifest = {
        "params": [{"name": name, "shape": list(value.shape)} for name, value in store.items()],
        "config": config,
    }
    blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, value in store.items():
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, mlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    manifest = json.loads(data[12:12 + mlen].decode("utf-8"))
    store = ParamStore()
    off = 12 + mlen
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = off + 8 * n
        if end > len(data):
            raise CheckpointError(f"{path}: truncated parameter data at {entry['name']!r}")
        arr = np.frombuffer(data[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        store.add(entry["name"], arr)
        off = end
    return store, manifest["config"]
