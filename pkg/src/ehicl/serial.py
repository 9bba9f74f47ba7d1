"""Versioned binary container: magic + JSON manifest + little-endian arrays.

Layout (all integers little-endian):

    magic          6 bytes, ascii, identifies format + version
    manifest_len   uint32
    manifest       UTF-8 JSON: {"meta": {...}, "arrays": [{name, dtype, shape}]}
    payload        arrays concatenated in manifest order, raw bytes

dtype is restricted to "<f8" and "<i8". The rig format uses magic "EHRIG1",
checkpoints "EHICL1"; other callers pick their own magic.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "BlobFormatError",
    "BadMagicError",
    "TruncatedBlobError",
    "ManifestMismatchError",
    "write_blob",
    "read_blob",
]

_ALLOWED_DTYPES = ("<f8", "<i8")


class BlobFormatError(ValueError):
    """Base class for container read failures."""


class BadMagicError(BlobFormatError):
    """Magic bytes did not match the expected format/version."""


class TruncatedBlobError(BlobFormatError):
    """File ended before the manifest-declared payload."""


class ManifestMismatchError(BlobFormatError):
    """Manifest-declared shapes disagree with the payload size."""


def write_blob(path, magic: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 6:
        raise ValueError(f"magic must be 6 ascii bytes, got {magic!r}")
    entries = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = np.ascontiguousarray(arr, dtype="<f8")
            dtype = "<f8"
        elif arr.dtype.kind in ("i", "u", "b"):
            arr = np.ascontiguousarray(arr, dtype="<i8")
            dtype = "<i8"
        else:
            raise ValueError(f"array {name!r}: unsupported dtype {arr.dtype}")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    manifest = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic.encode("ascii"))
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def read_blob(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 10:
        raise TruncatedBlobError(f"{path}: file shorter than header")
    got = raw[:6].decode("ascii", errors="replace")
    if got != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {got!r}")
    (mlen,) = struct.unpack("<I", raw[6:10])
    if len(raw) < 10 + mlen:
        raise TruncatedBlobError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(raw[10 : 10 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BlobFormatError(f"{path}: unreadable manifest: {exc}") from exc
    offset = 10 + mlen
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest.get("arrays", []):
        name, dtype, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
        if dtype not in _ALLOWED_DTYPES:
            raise ManifestMismatchError(f"{path}: array {name!r} has dtype {dtype!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise TruncatedBlobError(f"{path}: payload for {name!r} truncated")
        flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        try:
            arrays[name] = flat.reshape(shape).copy()
        except ValueError as exc:
            raise ManifestMismatchError(f"{path}: array {name!r}: {exc}") from exc
        offset += nbytes
    if offset != len(raw):
        raise ManifestMismatchError(
            f"{path}: {len(raw) - offset} trailing bytes beyond declared arrays"
        )
    return manifest.get("meta", {}), arrays
