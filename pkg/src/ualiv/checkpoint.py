"""Versioned binary checkpoint files.

Layout: magic string, format version, a JSON header (seed,
hyperparameters, optimizer counters, RNG state), then named parameter
blocks stored as little-endian float32 with explicit shapes.  Blocks
are written in sorted-name order so identical state always produces
identical bytes, and a load/save round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError

MAGIC = b"UALIVCKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(path, header: dict, blocks: dict) -> None:
    """Writes header metadata plus float32 parameter blocks to ``path``."""
    for name, arr in blocks.items():
        if not isinstance(arr, np.ndarray) or arr.dtype != np.float32:
            raise ConfigError(f"block {name!r} must be a float32 array")
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(blocks)))
        for name in sorted(blocks):
            arr = np.ascontiguousarray(blocks[name])
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_checkpoint(path):
    """Reads a checkpoint; returns (header, blocks). Corruption raises."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    try:
        return _parse(data)
    except (struct.error, ValueError, IndexError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"corrupted checkpoint {path}: {exc}") from exc


def _parse(data: bytes):
    off = 0
    if data[: len(MAGIC)] != MAGIC:
        raise ValidationError("bad magic string; not a checkpoint file")
    off += len(MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + header_len].decode("utf-8"))
    off += header_len
    (n_blocks,) = struct.unpack_from("<I", data, off)
    off += 4
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off) if ndim else ()
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        nbytes = count * 4
        arr = np.frombuffer(data[off : off + nbytes], dtype="<f4").reshape(shape).copy()
        if arr.size != count:
            raise ValidationError("truncated parameter block")
        off += nbytes
        blocks[name] = arr
    if off != len(data):
        raise ValidationError("trailing bytes after final block")
    return header, blocks
