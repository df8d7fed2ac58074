"""Versioned binary checkpoint container.

Layout (little-endian throughout):

    bytes 0-4   magic "GAPLM"
    byte  5     format version (currently 1)
    u32         config JSON length, then that many UTF-8 bytes
    u32         tensor count
    per tensor: u16 name length, name bytes, u8 ndim, ndim x u32 dims,
                then the row-major float32 payload

Tensors are stored as 32-bit floats regardless of the in-memory dtype; the
config record preserves the training dtype for reconstruction.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import LmConfig, LmParameters

MAGIC = b"GAPLM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: Path | str, params: LmParameters) -> None:
    tensors = params.named_tensors()
    config_blob = json.dumps(asdict(params.config), sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, tensor in tensors.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(bytes([tensor.ndim]))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            data = np.ascontiguousarray(tensor, dtype="<f4")
            fh.write(data.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def load_checkpoint(path: Path | str) -> LmParameters:
    with Path(path).open("rb") as fh:
        if _read_exact(fh, 5) != MAGIC:
            raise CheckpointError(f"{path}: not a GAPLM checkpoint")
        version = _read_exact(fh, 1)[0]
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = LmConfig(**json.loads(_read_exact(fh, config_len).decode("utf-8")))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            ndim = _read_exact(fh, 1)[0]
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
            )
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(_read_exact(fh, size * 4), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(config.np_dtype)

    try:
        w_in = [tensors[f"layer{l}.w_in"] for l in range(config.num_layers)]
        w_rec = [tensors[f"layer{l}.w_rec"] for l in range(config.num_layers)]
        bias = [tensors[f"layer{l}.bias"] for l in range(config.num_layers)]
        params = LmParameters(
            config,
            tensors["embedding"],
            w_in,
            w_rec,
            bias,
            tensors["proj.weight"],
            tensors["proj.bias"],
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from exc
    expected = {
        "embedding": (config.vocab_size, config.embed_dim),
        "proj.bias": (config.vocab_size,),
    }
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, expected {shape}"
            )
    params.check_finite()
    return params
