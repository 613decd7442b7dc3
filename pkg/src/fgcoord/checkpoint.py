"""Versioned binary checkpoint container.

Layout: magic, little-endian uint64 header length, UTF-8 JSON header, then
each array's raw C-order bytes in the order declared by the header. Raw
bytes keep float round-trips exact, which the resume contract requires.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"FGCKPT01"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """meta must be JSON-serializable; arrays keep dtype/shape exactly."""
    manifest = []
    blobs = []
    for name, array in arrays.items():
        arr = np.ascontiguousarray(array)
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {"format_version": FORMAT_VERSION, "meta": meta, "arrays": manifest}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad checkpoint magic; not a checkpoint file")
    header_len = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 8], "little")
    start = len(MAGIC) + 8
    if start + header_len > len(data):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {header.get('format_version')} != {FORMAT_VERSION}")
    arrays = {}
    offset = start + header_len
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        end = offset + nbytes
        if end > len(data):
            raise CheckpointError(f"truncated array payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype=dtype).reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after declared arrays")
    return header["meta"], arrays
