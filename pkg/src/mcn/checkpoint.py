"""Flat binary checkpoint format.

Layout (all integers little-endian)::

    4 bytes   magic b"MCN1"
    u32       header length H
    H bytes   UTF-8 JSON header: {"config": ..., "spec": ..., "extra": ...}
    u32       array count A
    A times:
        u16       name length, then the UTF-8 name
        u8        ndim
        ndim u64  shape
        f64[...]  values, C order, little-endian
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .model import ModelParams, ModelSpec

MAGIC = b"MCN1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec: ModelSpec, params: ModelParams, config: dict, extra: dict | None = None) -> None:
    header = json.dumps({"config": config, "spec": asdict(spec), "extra": extra or {}}, sort_keys=True).encode()
    arrays = params.named()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return ``(header dict, {name: array})``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an MCN1 checkpoint")
    try:
        pos = 4
        (h_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        header = json.loads(blob[pos:pos + h_len].decode())
        pos += h_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (n_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n_len].decode()
            pos += n_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return header, arrays


def load_checkpoint(path):
    """Return ``(ModelSpec, ModelParams, header)``."""
    header, arrays = read_checkpoint(path)
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in header["spec"].items()}
    spec = ModelSpec(**fields)
    return spec, ModelParams.from_named(spec, arrays), header
