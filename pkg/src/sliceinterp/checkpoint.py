"""SMDL1 model checkpoints.

Layout: ``SMDL1 {json header}\\n`` followed by one blob per named array
(parameters, then buffers): u32 name length, UTF-8 name, u32 ndim, ndim x u32
extents, then the values as little-endian float32.  All integers are
little-endian.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .models import ModelConfig, build_model
from .nn import Module

MAGIC = b"SMDL1 "


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Module, config: ModelConfig, path, extra: dict | None = None) -> None:
    state = model.state_dict()
    header = {"arch": config.arch, "config": config.to_dict(), "extra": extra or {}, "n_blobs": len(state)}
    parts = [MAGIC, json.dumps(header, sort_keys=True).encode("utf-8"), b"\n"]
    for name, arr in state.items():
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.asarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not an SMDL1 checkpoint")
    newline = raw.find(b"\n")
    try:
        header = json.loads(raw[len(MAGIC) : newline])
    except ValueError as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    pos = newline + 1
    blobs: dict[str, np.ndarray] = {}
    try:
        for _ in range(header["n_blobs"]):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            count = int(np.prod(shape))
            if pos + 4 * count > len(raw):
                raise CheckpointError(f"{path}: blob {name!r} truncated")
            blobs[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated blob table") from exc
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return header, blobs


def load_checkpoint(path, expected_arch: str | None = None) -> tuple[Module, ModelConfig, dict]:
    """Rebuild the model described by the header and load its weights."""
    header, blobs = read_checkpoint(path)
    if expected_arch is not None and header["arch"] != expected_arch:
        raise CheckpointError(f"{path}: checkpoint holds {header['arch']!r}, expected {expected_arch!r}")
    config = ModelConfig(**header["config"])
    model = build_model(config)
    try:
        model.load_state_dict(blobs)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model, config, header.get("extra", {})
