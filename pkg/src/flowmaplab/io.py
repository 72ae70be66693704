"""Checkpoint container: named float64 tensors plus a metadata record.

Layout: an ASCII preamble (magic, metadata key=value lines, per-tensor
headers) interleaved with raw little-endian float64 payloads.  Tensors are
written in sorted-name order so identical states produce identical bytes.
"""

from __future__ import annotations

import numpy as np

MAGIC = b"FLOWMAPCKPT1\n"


def save_checkpoint(path, tensors: dict, metadata: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"meta {len(metadata)}\n".encode("ascii"))
        for key in sorted(metadata):
            fh.write(f"{key}={metadata[key]}\n".encode("ascii"))
        fh.write(f"tensors {len(tensors)}\n".encode("ascii"))
        for name in sorted(tensors):
            # note: ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.asarray(tensors[name], dtype=np.float64)
            dims = ",".join(str(n) for n in arr.shape) if arr.ndim else "-"
            fh.write(f"tensor {name} {dims}\n".encode("ascii"))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        line = fh.readline().split()
        if line[0] != b"meta":
            raise ValueError("malformed checkpoint metadata header")
        metadata = {}
        for _ in range(int(line[1])):
            key, _, val = fh.readline().decode("ascii").rstrip("\n").partition("=")
            metadata[key] = val
        line = fh.readline().split()
        if line[0] != b"tensors":
            raise ValueError("malformed checkpoint tensor header")
        tensors = {}
        for _ in range(int(line[1])):
            header = fh.readline().decode("ascii").split()
            name = header[1]
            shape = () if header[2] == "-" else tuple(int(n) for n in header[2].split(","))
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return tensors, metadata
