"""Flat binary checkpoint format for model parameters.

Layout (all integers little-endian):

    magic     8 bytes   b"LXFRCKP1"
    version   uint32    currently 1
    config    9 x uint32 in ModelConfig field order:
              d_model, n_layers, n_heads, d_head, d_ff, seq_len,
              vocab_size, n_rel_buckets, rel_max_distance
    n_tensors uint32
    tensor*   name_len uint16, name utf-8, ndim uint8,
              dims uint32 * ndim, data float32 little-endian (C order)

Weights are stored as the float32 values held in memory, so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, Parameters, layer_names

MAGIC = b"LXFRCKP1"
VERSION = 1
_CONFIG_FIELDS = ("d_model", "n_layers", "n_heads", "d_head", "d_ff",
                  "seq_len", "vocab_size", "n_rel_buckets", "rel_max_distance")


def save_checkpoint(params: Parameters, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for name in _CONFIG_FIELDS:
        buf.write(struct.pack("<I", getattr(params.config, name)))
    names = layer_names(params.config)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        tensor = np.ascontiguousarray(params.tensors[name], dtype="<f4")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(tensor.tobytes(order="C"))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> Parameters:
    data = Path(path).read_bytes()
    view = io.BytesIO(data)

    def read(fmt: str):
        size = struct.calcsize(fmt)
        chunk = view.read(size)
        if len(chunk) != size:
            raise ValueError(f"truncated checkpoint {path}")
        return struct.unpack(fmt, chunk)

    if view.read(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path} is not a model checkpoint (bad magic)")
    (version,) = read("<I")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig(**{name: read("<I")[0] for name in _CONFIG_FIELDS})
    cfg.validate()
    (n_tensors,) = read("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = read("<H")
        name = view.read(name_len).decode("utf-8")
        (ndim,) = read("<B")
        shape = tuple(read("<I")[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = view.read(4 * count)
        if len(raw) != 4 * count:
            raise ValueError(f"truncated tensor {name} in {path}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    missing = set(layer_names(cfg)) - set(tensors)
    if missing:
        raise ValueError(f"checkpoint {path} is missing tensors: {sorted(missing)}")
    params = Parameters(cfg, tensors)
    params.check_finite()
    return params
