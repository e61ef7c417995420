"""Parameter checkpoints.

Layout: magic ``SNW1``, header length as little-endian uint32, a UTF-8 JSON
header, then every parameter as raw little-endian values in declaration
order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .network import NetworkSpec, StackedParams, StageParams
from .tensor import Tensor

MAGIC = b"SNW1"


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(params: StackedParams, path: str | Path, *, step: int = 0,
                    config: dict | None = None) -> None:
    named = params.named_parameters()
    dtype = named[0][1].dtype
    header = {
        "spec": params.spec.to_dict(),
        "n_stages": params.n_stages,
        "shared": params.shared,
        "dtype": np.dtype(dtype).newbyteorder("<").str,
        "step": int(step),
        "config": config or {},
        "config_hash": config_hash(config or {}),
        "layers": [{"name": n, "shape": list(t.shape)} for n, t in named],
        "meta": params.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    le = np.dtype(dtype).newbyteorder("<")
    payload = b"".join(np.ascontiguousarray(t.data, dtype=le).tobytes() for _, t in named)
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + payload)


def read_header(path: str | Path) -> dict:
    data = Path(path).read_bytes()
    return _split(data, path)[0]


def _split(data: bytes, path) -> tuple[dict, bytes]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    (n,) = struct.unpack("<I", data[4:8])
    return json.loads(data[8:8 + n].decode()), data[8 + n:]


def load_checkpoint(path: str | Path) -> tuple[StackedParams, dict]:
    header, payload = _split(Path(path).read_bytes(), path)
    spec = NetworkSpec.from_dict(header["spec"])
    dtype = np.dtype(header["dtype"])
    offset, stage_weights = 0, {}
    for layer in header["layers"]:
        count = int(np.prod(layer["shape"]))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {layer['name']}")
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(layer["shape"])
        offset += nbytes
        stage, name = layer["name"].split(".", 1)
        stage_weights.setdefault(stage, {})[name] = Tensor(arr.astype(dtype.newbyteorder("=")),
                                                           requires_grad=True, dtype=dtype.newbyteorder("="))
    stages = [StageParams(stage_weights[k]) for k in sorted(stage_weights, key=lambda s: int(s[5:]))]
    if header["shared"]:
        stages = stages * header["n_stages"]
    params = StackedParams(spec, stages, header["shared"], header.get("meta", {}))
    return params, header
