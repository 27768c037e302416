"""Flat binary container for named float64 arrays.

Layout::

    b"LFNET1"                 6-byte magic
    uint64 (little endian)    header length in bytes
    header                    UTF-8 JSON: {"format": "LFNET1", "arrays": [
                                  {"name", "shape", "offset"}, ...]}
    payload                   concatenated little-endian float64 data;
                              offsets are relative to the payload start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LFNET1"


class FormatError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"format": "LFNET1", "arrays": entries}).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:6] != MAGIC:
        raise FormatError("not an LFNET1 parameter container")
    (hlen,) = struct.unpack("<Q", blob[6:14])
    header = json.loads(blob[14:14 + hlen].decode())
    payload = memoryview(blob)[14 + hlen:]
    out = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        if start + 8 * count > len(payload):
            raise FormatError(f"array {e['name']!r} runs past the end of the payload")
        out[e["name"]] = np.frombuffer(payload[start:start + 8 * count], dtype="<f8") \
            .astype(np.float64).reshape(tuple(e["shape"]))
    return out


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load_arrays(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
