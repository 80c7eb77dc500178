"""Writers for the shared on-disk formats: graph document, tensor dumps, latency table.

These mirror the planner's published formats without importing it: a graph is
a version-1 JSON document, a tensor dump is a ``manifest.json`` plus raw
little-endian payloads, a latency table is ``{layer_id: microseconds}``.
"""

from __future__ import annotations

import json
import os

import numpy as np


def write_graph_document(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_tensor_dir(path: str, arrays: dict[str, np.ndarray], dtype: str = "f32") -> None:
    """One payload file plus a manifest, keys in sorted order."""
    np_dtype = {"f32": "<f4", "f64": "<f8"}[dtype]
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    payload_name = "tensors.bin"
    with open(os.path.join(path, payload_name), "wb") as payload:
        for key in sorted(arrays):
            arr = np.ascontiguousarray(np.asarray(arrays[key], dtype=np_dtype))
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
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"version": 1, "tensors": entries}, fh, indent=2)
        fh.write("\n")


def write_latency_table(table: dict[str, float], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dict(sorted(table.items())), fh, indent=2)
        fh.write("\n")
