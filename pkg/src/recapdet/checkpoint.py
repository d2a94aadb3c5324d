"""Single-file model checkpoints.

Layout::

    8 bytes   magic b"RCDTCKPT"
    uint32    format version (little-endian)
    uint32    header length in bytes
    header    UTF-8 JSON: {"version", "config", "tensors": [{name, shape, offset}], "extra"}
    payload   concatenated little-endian float32 tensor data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from recapdet.errors import CheckpointError
from recapdet.swin import SwinClassifier, SwinConfig, param_shapes
from recapdet.tensor import Tensor

MAGIC = b"RCDTCKPT"
VERSION = 1


def save_checkpoint(path, model: SwinClassifier, extra: dict | None = None) -> Path:
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, t in model.named_parameters():
        blob = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {"version": VERSION, "config": model.cfg.to_dict(), "tensors": entries, "extra": extra or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)
    return path


def read_header(path) -> tuple:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    return header, raw[16 + hlen:]


def load_checkpoint(path, expected: SwinConfig | None = None, dtype=np.float32) -> tuple:
    """Return ``(model, extra)``; raises CheckpointError on any mismatch."""
    header, payload = read_header(path)
    try:
        cfg = SwinConfig.from_dict(header["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config in checkpoint: {exc}") from exc
    if expected is not None and cfg != expected:
        diff = {k: (v, expected.to_dict()[k]) for k, v in cfg.to_dict().items() if expected.to_dict()[k] != v}
        raise CheckpointError(f"{path}: checkpoint config differs from requested config: {diff}")
    shapes = param_shapes(cfg)
    names = [e["name"] for e in header["tensors"]]
    if set(names) != set(shapes):
        raise CheckpointError(f"{path}: tensor names do not match the config")
    params = {}
    for e in header["tensors"]:
        shape = tuple(e["shape"])
        if shape != shapes[e["name"]]:
            raise CheckpointError(f"{path}: tensor {e['name']} has shape {shape}, config needs {shapes[e['name']]}")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"]).reshape(shape)
        params[e["name"]] = Tensor(arr.astype(dtype), requires_grad=True)
    ordered = {k: params[k] for k in shapes}
    return SwinClassifier(cfg, ordered, dtype=dtype), header.get("extra", {})
