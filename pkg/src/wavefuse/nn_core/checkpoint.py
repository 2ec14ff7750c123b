"""Versioned binary checkpoints.

Layout: the magic line ``WAVEFUSE-CKPT-1\\n``, a little-endian uint32 header
length, a UTF-8 JSON header listing ``{name, shape}`` in payload order plus
free-form ``meta``, then every tensor as little-endian float32, row-major.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"WAVEFUSE-CKPT-1\n"


class CheckpointError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    names = sorted(state)
    header = {
        "tensors": [{"name": n, "shape": list(np.shape(state[n]))} for n in names],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", len(hb)), hb]
    for n in names:
        parts.append(np.ascontiguousarray(state[n], dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a WAVEFUSE-CKPT-1 file (bad magic)")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off : off + hlen])
    off += hlen
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        state[entry["name"]] = arr.astype(np.float32)
        off += 4 * n
    if off != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint: {len(blob) - off}")
    return state, header.get("meta", {})


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, state: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Write a checkpoint atomically and return its sha256."""
    blob = dumps(state, meta)
    atomic_write(path, blob)
    return hashlib.sha256(blob).hexdigest()


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
