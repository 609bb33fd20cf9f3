"""Binary checkpoint format.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header
(layer names and shapes, config hash), then every layer as little-endian
float64 in header order.
"""
from __future__ import annotations

import hashlib
import json
import struct
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from .network import LAYER_ORDER, PolicyParameters

MAGIC = b"AVACKPT1"


class CheckpointError(ValueError):
    pass


class ShapeError(CheckpointError):
    pass


class ConfigHashWarning(UserWarning):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(params: PolicyParameters, path, cfg_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": 1,
        "config_hash": cfg_hash,
        "layers": [{"name": k, "shape": list(params.arrays[k].shape)} for k in LAYER_ORDER],
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for k in LAYER_ORDER:
            fh.write(np.ascontiguousarray(params.arrays[k], dtype="<f8").tobytes())
    return path


def load_checkpoint(path, obs_dim: Optional[int] = None, cfg_hash: Optional[str] = None,
                    template: Optional[PolicyParameters] = None) -> PolicyParameters:
    """Read a checkpoint; optionally enforce input width, layer shapes and config hash.

    A hash mismatch only warns, since evaluating a policy under a different
    configuration is sometimes what the caller wants.
    """
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC or len(raw) < 12:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode())
        layers = header["layers"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if [l["name"] for l in layers] != list(LAYER_ORDER):
        raise CheckpointError(f"{path}: unexpected layer list")
    offset = 12 + hlen
    expected_size = offset + 8 * sum(int(np.prod(l["shape"])) for l in layers)
    if len(raw) != expected_size:
        raise CheckpointError(f"{path}: size {len(raw)} bytes, header implies {expected_size}")
    arrays = {}
    for layer in layers:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape))
        arrays[layer["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(float).reshape(shape)
        offset += 8 * count
    params = PolicyParameters(arrays)
    if obs_dim is not None and params.obs_dim != obs_dim:
        raise ShapeError(f"checkpoint expects {params.obs_dim} inputs, environment gives {obs_dim}")
    if template is not None and template.shapes() != params.shapes():
        raise ShapeError(f"layer shapes {params.shapes()} differ from {template.shapes()}")
    if cfg_hash is not None and header.get("config_hash") != cfg_hash:
        warnings.warn(f"{path}: config hash {header.get('config_hash')!r} != {cfg_hash!r}",
                      ConfigHashWarning, stacklevel=2)
    return params
