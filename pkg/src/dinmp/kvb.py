"""KVB1: binary container for compacted key-vector batches.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"KVB1"
    offset 4   4 bytes   uint32 header length H
    offset 8   H bytes   UTF-8 JSON header
    ...        arrays    raw C-order data, concatenated in header order

The header is ``{"version": 1, "meta": {...}, "arrays": [{"name", "dtype",
"shape"}, ...]}``.  Batch arrays are ``row_offsets, keys, values, counts,
labels, target_key, target_category, other_features``; a file written with
raw sequences adds ``seq_offsets, seq_keys, seq_categories``.  All integer
arrays are stored as ``<i8``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .ingest import Compacted, IngestError, RaggedSequences, SparseBatch

MAGIC = b"KVB1"
VERSION = 1
BATCH_FIELDS = (
    "row_offsets",
    "keys",
    "values",
    "counts",
    "labels",
    "target_key",
    "target_category",
    "other_features",
)
SEQ_FIELDS = {"seq_offsets": "offsets", "seq_keys": "keys", "seq_categories": "categories"}


def write_kvb(path: str | Path, data: Compacted) -> None:
    arrays: list[tuple[str, np.ndarray]] = [(f, getattr(data.batch, f)) for f in BATCH_FIELDS]
    if data.sequences is not None:
        arrays += [(name, getattr(data.sequences, attr)) for name, attr in SEQ_FIELDS.items()]
    arrays = [(n, np.ascontiguousarray(a, dtype="<i8")) for n, a in arrays]
    header = {
        "version": VERSION,
        "meta": data.meta,
        "arrays": [{"name": n, "dtype": "<i8", "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(a.tobytes())


def read_kvb(path: str | Path) -> Compacted:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise IngestError(f"{path}: not a KVB1 file (bad magic {raw[:4]!r})")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    if header.get("version") != VERSION:
        raise IngestError(f"{path}: unsupported KVB version {header.get('version')}")
    pos = 8 + hlen
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(raw):
            raise IngestError(f"{path}: truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(entry["shape"]).astype(np.int64)
        pos += nbytes
    if pos != len(raw):
        raise IngestError(f"{path}: {len(raw) - pos} trailing bytes")
    missing = [f for f in BATCH_FIELDS if f not in arrays]
    if missing:
        raise IngestError(f"{path}: missing arrays {missing}")
    batch = SparseBatch(**{f: arrays[f] for f in BATCH_FIELDS})
    seqs = None
    if "seq_offsets" in arrays:
        seqs = RaggedSequences(**{attr: arrays[name] for name, attr in SEQ_FIELDS.items()})
    return Compacted(batch, seqs, header.get("meta", {}))
