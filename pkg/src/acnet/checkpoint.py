"""Single-file parameter archives.

Layout (all integers little-endian)::

    magic      8 bytes   b"ACNETCKP"
    version    uint32    currently 1
    header_len uint32    byte length of the JSON header
    header     UTF-8 JSON {"metadata": {...},
                           "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    payload    concatenated float32 ('<f4') buffers, C order; offsets are
               relative to the start of the payload

``metadata`` carries architecture hyperparameters so a checkpoint can be
rebuilt without outside information.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ACNETCKP"
VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        blobs.append(buf)
        offset += len(buf)
    header = json.dumps({"metadata": metadata or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for buf in blobs:
            fh.write(buf)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    payload = memoryview(raw)[16 + header_len :]
    tensors = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"] : e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return tensors, header["metadata"]
