"""Self-describing binary container for named arrays plus JSON metadata.

Byte layout::

    bytes 0..7    magic b"TBAR0001"
    bytes 8..15   header length N as little-endian uint64
    bytes 16..16+N  UTF-8 JSON header:
                    {"arrays": {name: {"dtype": <numpy dtype str>,
                                       "shape": [...], "offset": int}},
                     "meta": <arbitrary JSON>}
    remainder     concatenated raw array bytes, C-order, at the stated
                  offsets relative to the end of the header

The header is serialized with sorted keys and fixed separators, and arrays
are written in sorted-name order, so identical content produces identical
bytes. Reading back is exact: dtypes and shapes are restored from the header.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TBAR0001"


class ContainerError(IOError):
    """Raised on malformed container files."""


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        entries[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        offset += arr.nbytes
    header = json.dumps(
        {"arrays": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for name in names:
            f.write(np.ascontiguousarray(arrays[name]).tobytes())


def read_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic {magic!r}")
        header_len = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read()

    arrays = {}
    for name, entry in header["arrays"].items():
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        start = entry["offset"]
        raw = payload[start : start + nbytes]
        if len(raw) != nbytes:
            raise ContainerError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return arrays, header["meta"]
