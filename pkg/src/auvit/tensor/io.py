"""Flat binary archive for named float64 arrays.

Layout::

    b"AUVT\\x01"              magic + version
    uint64 (little endian)    byte length of the JSON index
    JSON index                {"tensors": [{"name", "shape", "offset"}], "meta": {...}}
    payload                   concatenated little-endian float64 values

Arrays round-trip bit-exactly. The index is written with sorted keys so two
saves of the same content produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"AUVT\x01"


def save_archive(path, arrays, meta=None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        # ascontiguousarray would promote 0-d arrays to 1-d
        data = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blob = data.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    index = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(index)))
        fh.write(index)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_archive(path):
    """Return ``(OrderedDict name -> array, meta dict)``."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a tensor archive")
    head = len(MAGIC)
    if len(raw) < head + 8:
        raise ParseError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[head:head + 8])
    try:
        index = json.loads(raw[head + 8:head + 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ParseError(f"{path}: corrupt index ({exc})") from None
    base = head + 8 + n
    arrays = OrderedDict()
    for entry in index["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        buf = raw[start:start + 8 * count]
        if len(buf) != 8 * count:
            raise ParseError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return arrays, index.get("meta", {})
