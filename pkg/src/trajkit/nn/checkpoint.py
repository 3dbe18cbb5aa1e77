"""Checkpoint format: a JSON manifest plus one little-endian raw buffer.

The manifest lists every entry (trainable parameters first, then buffers such
as batch-norm running statistics) with name and shape; the ``.bin`` file holds
their data concatenated in manifest order. Loading verifies the total byte
length before copying anything.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import MalformedInput, ShapeMismatch
from .layers import Module

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(model: Module, prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.json`` and ``<prefix>.bin``; returns both paths."""
    prefix = Path(prefix)
    params = list(model.named_parameters())
    buffers = list(model.named_buffers())
    dtype = str(params[0][1].data.dtype) if params else "float64"
    if dtype not in _DTYPES:
        raise MalformedInput(f"unsupported checkpoint dtype {dtype}")

    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": dtype,
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in params],
        "buffers": [{"name": n, "shape": list(b.shape)} for n, b in buffers],
    }
    blob = b"".join(
        np.ascontiguousarray(x, dtype=_DTYPES[dtype]).tobytes()
        for x in [t.data for _, t in params] + [b for _, b in buffers]
    )
    json_path = prefix.with_suffix(".json")
    bin_path = prefix.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, sort_keys=True))
    bin_path.write_bytes(blob)
    return json_path, bin_path


def load_checkpoint(model: Module, prefix: str | Path):
    """Copy parameters and buffers from ``<prefix>.{json,bin}`` into *model*."""
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise MalformedInput(f"unknown checkpoint version {manifest.get('format_version')}")
    dtype = manifest["dtype"]
    if dtype not in _DTYPES:
        raise MalformedInput(f"unsupported checkpoint dtype {dtype}")
    np_dtype = np.dtype(_DTYPES[dtype])

    entries = [(e["name"], tuple(e["shape"]), "param") for e in manifest["params"]]
    entries += [(e["name"], tuple(e["shape"]), "buffer") for e in manifest["buffers"]]
    expected = sum(int(np.prod(shape)) for _, shape, _ in entries) * np_dtype.itemsize
    blob = prefix.with_suffix(".bin").read_bytes()
    if len(blob) != expected:
        raise MalformedInput(f"checkpoint buffer is {len(blob)} bytes, expected {expected}")

    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    offset = 0
    for name, shape, kind in entries:
        count = int(np.prod(shape))
        chunk = np.frombuffer(blob, dtype=np_dtype, count=count, offset=offset)
        offset += count * np_dtype.itemsize
        if kind == "param":
            if name not in params:
                raise MalformedInput(f"checkpoint parameter {name} not in model")
            target = params[name]
            if target.data.shape != shape:
                raise ShapeMismatch(f"{name}: checkpoint {shape} vs model {target.data.shape}")
            target.data = chunk.reshape(shape).astype(target.data.dtype)
        else:
            if name not in buffers:
                raise MalformedInput(f"checkpoint buffer {name} not in model")
            if buffers[name].shape != shape:
                raise ShapeMismatch(f"{name}: checkpoint {shape} vs model {buffers[name].shape}")
            buffers[name][:] = chunk.reshape(shape).astype(buffers[name].dtype)


def parameter_element_count(prefix: str | Path) -> int:
    """Total trainable parameter elements recorded in a checkpoint manifest."""
    manifest = json.loads(Path(prefix).with_suffix(".json").read_text())
    return sum(int(np.prod(e["shape"])) for e in manifest["params"])
