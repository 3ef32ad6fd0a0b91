"""Versioned binary checkpoints.

Layout: magic, format version, config hash, then a length-prefixed JSON
index describing named little-endian array blobs and a JSON metadata tree
(counters, RNG states, optimizer scalars), then the raw array bytes.
Loading verifies magic/version/config hash and refuses truncated files
without leaving partial state behind.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

MAGIC = b"LWMCKPT1"
VERSION = 1


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf8")).hexdigest()


def save(path, cfg_hash: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    index = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        index.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"index": index, "meta": meta}).encode("utf8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_hash)))
        fh.write(cfg_hash.encode("ascii"))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", offset))
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load(path, expect_hash: str | None = None) -> tuple[str, dict[str, np.ndarray], dict]:
    """Returns (config hash, arrays, meta). Raises ConfigurationError on any
    mismatch or truncation."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    try:
        if bytes(view[:8]) != MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint (bad magic)")
        pos = 8
        (version,) = struct.unpack_from("<I", view, pos)
        pos += 4
        if version != VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack_from("<I", view, pos)
        pos += 4
        cfg_hash = bytes(view[pos:pos + hlen]).decode("ascii")
        pos += hlen
        (jlen,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        header = json.loads(bytes(view[pos:pos + jlen]).decode("utf8"))
        if len(view[pos:pos + jlen]) != jlen:
            raise ConfigurationError(f"{path}: truncated checkpoint header")
        pos += jlen
        (blob_len,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        blob = view[pos:pos + blob_len]
        if len(blob) != blob_len:
            raise ConfigurationError(f"{path}: truncated checkpoint data")
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise ConfigurationError(f"{path}: corrupt checkpoint ({e})") from e
    if expect_hash is not None and cfg_hash != expect_hash:
        raise ConfigurationError(
            f"{path}: config hash mismatch (checkpoint {cfg_hash[:12]}..., "
            f"expected {expect_hash[:12]}...)")
    arrays = {}
    for ent in header["index"]:
        start, n = ent["offset"], ent["nbytes"]
        if start + n > blob_len:
            raise ConfigurationError(f"{path}: truncated array {ent['name']!r}")
        arr = np.frombuffer(blob[start:start + n],
                            dtype=np.dtype(ent["dtype"]).newbyteorder("<"))
        arrays[ent["name"]] = arr.reshape(ent["shape"]).astype(ent["dtype"]).copy()
    return cfg_hash, arrays, header["meta"]
