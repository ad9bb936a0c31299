"""Model checkpoints.

Layout (little-endian)::

    magic "CSIM" | version u16 | header length u32 | header JSON (utf-8)
    then for every tensor listed in header["tensors"]: float64 data, row-major

The JSON header echoes the :class:`ModelSpec` plus arbitrary metadata and
names every tensor with its shape, in storage order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .networks import ModelSpec, build_model

MAGIC = b"CSIM"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net, meta=None):
    state = net.state_dict()
    header = {"spec": net.spec.to_dict(), "meta": meta or {},
              "tensors": [[name, list(arr.shape)] for name, arr in state.items()]}
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in state.values())
    Path(path).write_bytes(_HEAD.pack(MAGIC, VERSION, len(blob)) + blob + body)


def load_checkpoint(path, expect_spec: ModelSpec | None = None):
    """Rebuild the network stored at ``path``; returns ``(net, meta)``."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEAD.size or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    _, version, hlen = _HEAD.unpack_from(buf)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[_HEAD.size:_HEAD.size + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    spec = ModelSpec(**header["spec"])
    if expect_spec is not None and expect_spec.to_dict() != spec.to_dict():
        raise CheckpointError(f"{path}: spec {spec} does not match expected {expect_spec}")
    net = build_model(spec)
    expected = {name: p.shape for name, p in net.named_parameters()}
    offset = _HEAD.size + hlen
    state = {}
    for name, shape in header["tensors"]:
        shape = tuple(shape)
        if expected.get(name) != shape:
            raise CheckpointError(f"{path}: tensor {name} {shape} disagrees with the spec "
                                  f"({expected.get(name)})")
        count = int(np.prod(shape))
        if offset + 8 * count > len(buf):
            raise CheckpointError(f"{path}: truncated in tensor {name}")
        state[name] = np.frombuffer(buf, "<f8", count, offset).reshape(shape)
        offset += 8 * count
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes")
    try:
        net.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return net, header["meta"]
