"""Checkpoint container.

Layout of a ``.ckpt`` file (all integers little-endian):

    bytes 0..7    uint64  L, byte length of the JSON index
    bytes 8..8+L  UTF-8 JSON: {parameter name: {"shape": [...],
                                                "offset": payload byte offset,
                                                "dtype": "f32"}}
    remainder     raw float32 payload, little-endian, row-major

Offsets are relative to the start of the payload. The model configuration
is stored alongside in ``<checkpoint>.config.json``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError
from .model import DetectorParams, ModelConfig, init_detector_params, named_params
from .tensor import Tensor


def save_checkpoint(path, params: list[tuple[str, Tensor]],
                    config: ModelConfig | None = None) -> None:
    path = Path(path)
    index: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name, t in params:
        raw = np.ascontiguousarray(t.data.astype("<f4", copy=False)).tobytes()
        index[name] = {"shape": list(t.shape), "offset": offset, "dtype": "f32"}
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(index, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for c in chunks:
            f.write(c)
    if config is not None:
        Path(str(path) + ".config.json").write_text(config.to_json() + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig | None]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ContractError(f"checkpoint {path} is truncated")
    (hlen,) = struct.unpack("<Q", raw[:8])
    index = json.loads(raw[8:8 + hlen].decode("utf-8"))
    payload = raw[8 + hlen:]
    arrays: dict[str, np.ndarray] = {}
    for name, entry in index.items():
        if entry["dtype"] != "f32":
            raise ContractError(f"unsupported dtype {entry['dtype']} for {name}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[name] = arr.reshape(shape).astype(np.float32)
    cfg_path = Path(str(path) + ".config.json")
    config = ModelConfig.from_json(cfg_path.read_text()) if cfg_path.exists() else None
    return arrays, config


def load_detector(path) -> tuple[DetectorParams, ModelConfig]:
    """Rebuild a detector from a checkpoint and its config sidecar."""
    arrays, config = load_checkpoint(path)
    if config is None:
        raise ContractError(f"missing config sidecar for {path}")
    params = init_detector_params(config)
    for name, t in named_params(params):
        if name not in arrays:
            raise ContractError(f"checkpoint is missing parameter {name}")
        if arrays[name].shape != t.shape:
            raise ContractError(
                f"shape mismatch for {name}: checkpoint {arrays[name].shape} vs model {t.shape}")
        t.data = arrays[name].copy()
    return params, config
