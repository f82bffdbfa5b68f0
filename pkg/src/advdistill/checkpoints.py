"""Binary checkpoint container for named tensors plus JSON metadata.

Layout (little-endian):

    magic    4 bytes  b"ADCP"
    version  u32
    hlen     u64     length of the UTF-8 JSON header
    header   hlen bytes
    blob     concatenated tensor bytes, offsets recorded in the header

The header carries the architecture descriptor, the tensor directory
(name, shape, dtype, offset, nbytes) and free-form metadata. Tensors are
stored as little-endian float32 (canonical storage); the header JSON is
canonical (sorted keys), so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ADCP"
VERSION = 1
_PREFIX = struct.Struct("<IQ")


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint."""


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    architecture: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def save_checkpoint(path, tensors: dict[str, np.ndarray], architecture: dict | None = None,
                    metadata: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f4",
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"version": VERSION, "architecture": architecture or {},
              "tensors": entries, "metadata": metadata or {}}
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_PREFIX.pack(VERSION, len(hjson)))
        f.write(hjson)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, hlen = _PREFIX.unpack_from(blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    start = 4 + _PREFIX.size
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from e
    body = blob[start + hlen:]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(body):
            raise CheckpointError(f"corrupted tensor '{entry['name']}': needs bytes "
                                  f"[{entry['offset']}, {end}) but blob has {len(body)}")
        expected = int(np.prod(entry["shape"])) * 4
        if expected != entry["nbytes"]:
            raise CheckpointError(f"corrupted tensor '{entry['name']}': shape {entry['shape']} "
                                  f"needs {expected} bytes, directory says {entry['nbytes']}")
        arr = np.frombuffer(body, dtype=entry["dtype"], count=entry["nbytes"] // 4,
                            offset=entry["offset"]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return Checkpoint(tensors, header.get("architecture", {}), header.get("metadata", {}))


def save_model(model, path, metadata: dict | None = None) -> None:
    save_checkpoint(path, model.state_dict(), model.descriptor(), metadata)


def load_model_into(model, path) -> dict:
    """Load parameters into an existing model; returns the metadata."""
    ckpt = load_checkpoint(path)
    if ckpt.architecture != model.descriptor():
        raise CheckpointError(f"architecture mismatch: checkpoint {ckpt.architecture} "
                              f"vs model {model.descriptor()}")
    model.load_state_dict(ckpt.tensors)
    return ckpt.metadata


def load_model(path, seed: int = 0, dtype=np.float32):
    """Rebuild the model recorded in a checkpoint and load its weights."""
    from .models import build_from_descriptor

    ckpt = load_checkpoint(path)
    model = build_from_descriptor(ckpt.architecture, seed=seed, dtype=dtype)
    model.load_state_dict(ckpt.tensors)
    return model, ckpt.metadata
