"""Flat binary parameter files.

Layout (all little-endian): ``uint32`` header length, UTF-8 JSON header
``{"tensors": [{"name", "shape", "offset"}, ...]}`` with offsets relative to
the first byte after the header, then the raw float32 arrays in order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CheckpointError


def write_arrays(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"tensors": entries}, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def read_arrays(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read every array; raises :class:`CheckpointError` before returning anything partial."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 4:
        raise CheckpointError(f"checkpoint {path} is truncated (no header length)")
    (hlen,) = struct.unpack("<I", raw[:4])
    if 4 + hlen > len(raw):
        raise CheckpointError(f"checkpoint {path} is truncated inside the header")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
        entries = header["tensors"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} has a malformed header: {exc}") from exc
    body = memoryview(raw)[4 + hlen :]
    out: dict[str, np.ndarray] = {}
    for e in entries:
        name, shape, off = e["name"], tuple(e["shape"]), e["offset"]
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off < 0 or off + nbytes > len(body):
            raise CheckpointError(f"checkpoint {path} is truncated in parameter {name!r}")
        out[name] = np.frombuffer(body[off : off + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
    return out
