"""Bit-exact tensor dump format.

A dump directory holds one ``manifest.json`` plus raw payload files. The
manifest lists, per tensor, its key, dtype, shape, payload file and byte
offset; payloads are row-major little-endian IEEE-754. No framework-native
container, so any exporter in any language can produce or consume dumps
byte-exactly.
"""

from __future__ import annotations

import json
import os
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .errors import GraphFormatError

MANIFEST_NAME = "manifest.json"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True)
class TensorBlob:
    key: str
    dtype: str
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise GraphFormatError(f"{self.key}: unknown dtype {self.dtype!r}, expected f32 or f64")
        if len(self.shape) < 1 or any(not isinstance(d, int) or d <= 0 for d in self.shape):
            raise GraphFormatError(f"{self.key}: shape must be positive integers, got {self.shape}")
        if tuple(self.data.shape) != self.shape:
            raise GraphFormatError(f"{self.key}: data shape {self.data.shape} != declared {self.shape}")


def load_tensor_dir(path) -> dict[str, TensorBlob]:
    """Load every tensor listed in a dump directory's manifest."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise GraphFormatError(f"no {MANIFEST_NAME} in {path}") from None
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{manifest_path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc

    if not isinstance(manifest, dict) or manifest.get("version") != 1 or "tensors" not in manifest:
        raise GraphFormatError(f"{manifest_path}: expected {{'version': 1, 'tensors': [...]}}")

    payload_cache: dict[str, bytes] = {}
    blobs: dict[str, TensorBlob] = {}
    for entry in manifest["tensors"]:
        missing = {"key", "dtype", "shape", "file", "byte_offset"} - set(entry)
        if missing:
            raise GraphFormatError(f"manifest entry missing fields {sorted(missing)}: {entry}")
        key = entry["key"]
        if key in blobs:
            raise GraphFormatError(f"duplicate tensor key {key!r}")
        dtype_name = entry["dtype"]
        if dtype_name not in _DTYPES:
            raise GraphFormatError(f"{key}: unknown dtype {dtype_name!r}")
        dtype = _DTYPES[dtype_name]
        shape = tuple(entry["shape"])
        if not shape or any(not isinstance(d, int) or d <= 0 for d in shape):
            raise GraphFormatError(f"{key}: bad shape {entry['shape']!r}")
        count = int(np.prod(shape))
        offset = entry["byte_offset"]
        if not isinstance(offset, int) or offset < 0:
            raise GraphFormatError(f"{key}: bad byte_offset {offset!r}")

        fname = entry["file"]
        if fname not in payload_cache:
            fpath = os.path.join(path, fname)
            try:
                with open(fpath, "rb") as fh:
                    payload_cache[fname] = fh.read()
            except FileNotFoundError:
                raise GraphFormatError(f"{key}: payload file {fname!r} not found in {path}") from None
        payload = payload_cache[fname]
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(payload):
            raise GraphFormatError(
                f"{key}: payload truncated, need {offset + nbytes} bytes in {fname!r} "
                f"but file has {len(payload)}"
            )
        data = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        blobs[key] = TensorBlob(key=key, dtype=dtype_name, shape=shape, data=data)
    return blobs


def save_tensor_dir(path, blobs: Mapping[str, np.ndarray], dtype: str = "f64") -> None:
    """Write arrays as one payload file plus a manifest (keys in sorted order)."""
    if dtype not in _DTYPES:
        raise GraphFormatError(f"unknown dtype {dtype!r}, expected f32 or f64")
    os.makedirs(path, exist_ok=True)
    np_dtype = _DTYPES[dtype]
    entries = []
    offset = 0
    payload_name = "tensors.bin"
    with open(os.path.join(path, payload_name), "wb") as payload:
        for key in sorted(blobs):
            arr = np.ascontiguousarray(np.asarray(blobs[key], dtype=np_dtype))
            if arr.ndim < 1:
                arr = arr.reshape(1)
            raw = arr.tobytes()
            entries.append({
                "key": key,
                "dtype": dtype,
                "shape": list(arr.shape),
                "file": payload_name,
                "byte_offset": offset,
            })
            payload.write(raw)
            offset += len(raw)
    manifest = {"version": 1, "tensors": entries}
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
