"""Parameter checkpoints: JSON manifest plus raw little-endian values.

Layout: magic line, 8-byte little-endian manifest length, manifest JSON
(ordered list of name/shape/dtype, parameters then buffers), then the
concatenated raw values in manifest order. Round-trips byte-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .ndgrad import Module

MAGIC = b"NDCKPT1\n"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointMismatch(Exception):
    """Checkpoint does not fit the model (missing name or shape diff)."""


def _entries(model: Module):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, b in model.named_buffers():
        yield f"buffer:{name}", b


def save_checkpoint(model: Module, path) -> None:
    path = Path(path)
    manifest = []
    blobs = []
    for name, arr in _entries(model):
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {dtype} for {name}")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    header = json.dumps(manifest).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_checkpoint(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(hlen).decode())
        out = {}
        for entry in manifest:
            shape = tuple(entry["shape"])
            dtype = _DTYPES[entry["dtype"]]
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * np.dtype(dtype).itemsize)
            out[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(
                entry["dtype"]
            )
    return out


def load_checkpoint(model: Module, path) -> None:
    """Copy stored values into the model; shape mismatches are fatal."""
    stored = read_checkpoint(path)
    for name, arr in _entries(model):
        key = name
        if key not in stored:
            raise CheckpointMismatch(f"checkpoint is missing entry {name!r}")
        src = stored[key]
        if tuple(src.shape) != tuple(arr.shape):
            raise CheckpointMismatch(
                f"shape mismatch for {name!r}: checkpoint {tuple(src.shape)} vs model {tuple(arr.shape)}"
            )
        arr[...] = src
