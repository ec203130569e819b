"""Versioned binary parameter checkpoints.

Layout: magic ``SGCK``, format version, parameter count, then per parameter
the utf-8 name, the shape, and raw little-endian float64 values. Round
trips are byte-deterministic.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"SGCK"
VERSION = 1


def save_checkpoint(path, params) -> None:
    params = list(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint into {name: ndarray}."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64)
        return out


def restore_params(params, state: dict) -> None:
    for p in params:
        if p.name not in state:
            raise ValueError(f"checkpoint is missing parameter {p.name}")
        if state[p.name].shape != p.data.shape:
            raise ValueError(
                f"shape mismatch for {p.name}: {state[p.name].shape} vs {p.data.shape}"
            )
        p.data = state[p.name].copy()
