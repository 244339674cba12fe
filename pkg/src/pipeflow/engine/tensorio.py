"""Tensor files: raw little-endian integers plus a JSON sidecar.

``name.bin`` holds the values row-major as int8 or int16; ``name.json`` holds
``{"dims": [...], "bits": 8|16, "fraction_bits": [...]}``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..model import QuantFormat
from .core import QuantTensor, ShapeError

__all__ = ["save_tensor", "load_tensor", "sidecar_path"]

_DTYPES = {8: "<i1", 16: "<i2"}


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def save_tensor(path: str | Path, tensor: QuantTensor) -> None:
    path = Path(path)
    path.write_bytes(tensor.values.astype(_DTYPES[tensor.bits]).tobytes())
    meta = {"dims": list(tensor.dims), "bits": tensor.bits,
            "fraction_bits": list(tensor.fmt.fraction_bits)}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def load_tensor(path: str | Path) -> QuantTensor:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    bits = int(meta["bits"])
    if bits not in _DTYPES:
        raise ValueError(f"{sidecar_path(path)}: bits must be 8 or 16, got {bits}")
    dims = tuple(int(d) for d in meta["dims"])
    raw = np.frombuffer(path.read_bytes(), dtype=_DTYPES[bits])
    if raw.size != int(np.prod(dims)):
        raise ShapeError(f"{path}: {raw.size} values, sidecar dims {dims} "
                         f"need {int(np.prod(dims))}")
    return QuantTensor(raw.reshape(dims).astype(np.int64),
                       QuantFormat(bits, tuple(meta["fraction_bits"])))
