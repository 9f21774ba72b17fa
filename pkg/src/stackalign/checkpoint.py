"""Checkpoint files: parameter name -> shape -> row-major float64 values.

The format is versioned JSON so checkpoints stay diffable and portable.
Serialization is canonical (sorted keys, fixed separators), which makes a
rerun with the same seed produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

FORMAT_VERSION = 1


def save_params(path: str | Path, params: dict[str, Tensor | np.ndarray],
                meta: dict | None = None) -> None:
    """``meta`` holds whatever JSON-serializable context is needed to rebuild
    the module the parameters belong to (dimensions, preset names, ...)."""
    blob: dict[str, object] = {"format_version": FORMAT_VERSION, "params": {}}
    if meta is not None:
        blob["meta"] = meta
    for name in sorted(params):
        p = params[name]
        arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        blob["params"][name] = {
            "shape": list(arr.shape),
            "values": [float(x) for x in arr.reshape(-1)],
        }
    Path(path).write_text(json.dumps(blob, sort_keys=True, separators=(",", ":")))


def load_meta(path: str | Path) -> dict:
    blob = json.loads(Path(path).read_text())
    return blob.get("meta", {})


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    blob = json.loads(Path(path).read_text())
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}, expected {FORMAT_VERSION}")
    out: dict[str, np.ndarray] = {}
    for name, entry in blob["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        expect = int(np.prod(shape)) if shape else 1
        if values.shape[0] != expect:
            raise ValueError(f"{name}: expected {expect} values for shape {shape}, got {values.shape[0]}")
        out[name] = values.reshape(shape)
    return out
