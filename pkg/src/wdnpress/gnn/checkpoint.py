"""Weight checkpoints: magic, header length, JSON header, raw f64 arrays."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import SchemaMismatch
from .model import ModelConfig, ModelWeights

MAGIC = b"WDNGATR1"


def save_weights(path: str | Path, weights: ModelWeights, provenance: dict | None = None) -> Path:
    path = Path(path)
    names = sorted(weights.params)
    offset = 0
    arrays = []
    for name in names:
        arr = weights.params[name]
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps(
        {"config": weights.config.to_dict(), "arrays": arrays, "dtype": "<f8", "provenance": provenance or {}},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.ascontiguousarray(weights.params[name], dtype="<f8").tobytes())
    return path


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise SchemaMismatch(f"{path} is not a weight checkpoint")
        (length,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(length).decode("utf-8"))


def load_weights(path: str | Path) -> tuple[ModelWeights, dict]:
    """Weights and the provenance dict stored with them."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise SchemaMismatch(f"{path} is not a weight checkpoint")
    (length,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + length].decode("utf-8"))
    body = raw[start + length :]
    weights = ModelWeights(ModelConfig.from_dict(header["config"]))
    for info in header["arrays"]:
        count = int(np.prod(info["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=info["offset"])
        weights.params[info["name"]] = arr.reshape(info["shape"]).astype(np.float64)
    weights.check()
    return weights, header.get("provenance", {})
