"""CSIB binary container for CSI amplitude datasets.

Layout (little-endian)::

    magic   "CSIB"            4 bytes
    version u16               1 = plain, 2 = adds a flags word
    N, A, K, T u32 each
    C       u16               number of classes
    flags   u16               version 2 only; bit 0 = adversarial batch
    N records of:
        label        u16
        clean_index  u32      only when the adversarial flag is set
        amplitudes   A*K*T float32, row-major (A, K, T)

Adversarial batches pair each perturbed record with the index of the clean
sample it came from so transfer evaluation can be replayed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .synth import CsiDataset

MAGIC = b"CSIB"
FLAG_ADVERSARIAL = 0x1
_HEAD = struct.Struct("<4sHIIIIH")
_FLAGS = struct.Struct("<H")
MAX_ELEMENTS = 1 << 34


class CsibFormatError(ValueError):
    def __init__(self, offset, message):
        super().__init__(f"CSIB error at byte {offset}: {message}")
        self.offset = offset


def _record_dtype(dims, adversarial):
    fields = [("label", "<u2")]
    if adversarial:
        fields.append(("clean_index", "<u4"))
    fields.append(("data", "<f4", dims))
    return np.dtype(fields)


def write_csib(dataset: CsiDataset, path, clean_index=None):
    """Write ``dataset``; passing ``clean_index`` marks it adversarial."""
    X, y = dataset.X, dataset.y
    n = X.shape[0]
    dims = tuple(int(d) for d in X.shape[1:])
    if dataset.n_classes > 0xFFFF:
        raise ValueError("too many classes for the CSIB label field")
    adversarial = clean_index is not None
    rec = np.zeros(n, dtype=_record_dtype(dims, adversarial))
    rec["label"] = y
    rec["data"] = X.astype("<f4")
    header = _HEAD.pack(MAGIC, 2 if adversarial else 1, n, *dims, dataset.n_classes)
    if adversarial:
        clean_index = np.asarray(clean_index)
        if clean_index.shape != (n,):
            raise ValueError("clean_index must hold one index per record")
        rec["clean_index"] = clean_index
        header += _FLAGS.pack(FLAG_ADVERSARIAL)
    Path(path).write_bytes(header + rec.tobytes())


def read_csib(path, with_index=False):
    """Read a CSIB file. With ``with_index`` returns ``(dataset, clean_index)``
    where the index is ``None`` for plain files."""
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CsibFormatError(0, f"bad magic {buf[:4]!r}")
    if len(buf) < _HEAD.size:
        raise CsibFormatError(len(buf), "truncated header")
    _, version, n, a, k, t, c = _HEAD.unpack_from(buf, 0)
    if version not in (1, 2):
        raise CsibFormatError(4, f"unsupported version {version}")
    offset = _HEAD.size
    flags = 0
    if version == 2:
        if len(buf) < offset + _FLAGS.size:
            raise CsibFormatError(len(buf), "truncated flags word")
        (flags,) = _FLAGS.unpack_from(buf, offset)
        offset += _FLAGS.size
    if min(a, k, t) < 1:
        raise CsibFormatError(10, f"zero dimension in (A, K, T) = {(a, k, t)}")
    if n * a * k * t > MAX_ELEMENTS:
        raise CsibFormatError(6, f"dimension overflow: {n}x{a}x{k}x{t} elements")
    adversarial = bool(flags & FLAG_ADVERSARIAL)
    dtype = _record_dtype((a, k, t), adversarial)
    need = offset + n * dtype.itemsize
    if len(buf) < need:
        done = (len(buf) - offset) // dtype.itemsize
        raise CsibFormatError(offset + done * dtype.itemsize,
                              f"truncated after {done} of {n} records")
    if len(buf) > need:
        raise CsibFormatError(need, f"{len(buf) - need} trailing bytes")
    rec = np.frombuffer(buf, dtype=dtype, count=n, offset=offset)
    labels = rec["label"].astype(np.int64)
    if n and labels.max() >= max(c, 1):
        bad = int(np.argmax(labels >= c))
        raise CsibFormatError(offset + bad * dtype.itemsize, f"label {labels[bad]} >= C={c}")
    ds = CsiDataset(rec["data"].astype(np.float64), labels, c)
    if with_index:
        return ds, (rec["clean_index"].astype(np.int64) if adversarial else None)
    return ds
