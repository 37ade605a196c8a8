"""Binary checkpoint format for named parameter sets.

Layout: magic, format version, a JSON config blob (with its own digest), then
one record per parameter: name, dtype, shape, raw little-endian data.  Files
are written to a temp path and atomically renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from typing import Dict, Tuple

import numpy as np

MAGIC = b"ARNAVCK1"
VERSION = 1

__all__ = ["config_digest", "save_checkpoint", "load_checkpoint"]


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path: str, params: Dict[str, np.ndarray], config: dict) -> None:
    cfg = dict(config)
    cfg_json = json.dumps(
        {"config": cfg, "digest": config_digest(cfg)}, sort_keys=True
    ).encode()
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<I", len(cfg_json)))
            f.write(cfg_json)
            f.write(struct.pack("<I", len(params)))
            for name in sorted(params):
                # note: ascontiguousarray would promote 0-d arrays to (1,)
                arr = np.asarray(params[name], order="C")
                nb = name.encode()
                dt = arr.dtype.str.encode()  # e.g. b"<f8"
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", len(dt)))
                f.write(dt)
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
                data = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
                f.write(struct.pack("<Q", len(data)))
                f.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(clen).decode())
        config = meta["config"]
        if meta["digest"] != config_digest(config):
            raise ValueError(f"{path}: config digest mismatch")
        (count,) = struct.unpack("<I", f.read(4))
        params: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            (dlen,) = struct.unpack("<I", f.read(4))
            dtype = np.dtype(f.read(dlen).decode())
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}q", f.read(8 * ndim)) if ndim else ()
            (nbytes,) = struct.unpack("<Q", f.read(8))
            arr = np.frombuffer(f.read(nbytes), dtype=dtype.newbyteorder("<")).reshape(shape)
            params[name] = arr.astype(dtype, copy=True)
    return params, config
