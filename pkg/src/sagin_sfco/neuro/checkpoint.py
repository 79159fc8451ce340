"""Versioned binary checkpoint for :class:`PolicyModel`.

Layout, all little-endian::

    8 bytes   magic b"SFCOGAT\\0"
    u32       format version (1)
    u32       feature dimension F
    u32       hidden units H
    u32       block count B
    B times:
      u16       name length L
      L bytes   block name, UTF-8
      u8        ndim
      ndim*u32  shape
      f64[...]  values, row-major
    u64       training seed
    u64       episode counter
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .model import PARAM_ORDER, PolicyModel

MAGIC = b"SFCOGAT\x00"
FORMAT_VERSION = 1


def dumps_checkpoint(model: PolicyModel, seed: int = 0, episodes: int = 0) -> bytes:
    out = [MAGIC, struct.pack("<IIII", FORMAT_VERSION, model.feature_dim, model.hidden, len(PARAM_ORDER))]
    for name in PARAM_ORDER:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes(order="C"))
    out.append(struct.pack("<QQ", seed, episodes))
    return b"".join(out)


def loads_checkpoint(blob: bytes) -> tuple[PolicyModel, dict]:
    try:
        if blob[:8] != MAGIC:
            raise ParseError("not a policy checkpoint (bad magic)")
        pos = 8
        version, fdim, hidden, nblocks = struct.unpack_from("<IIII", blob, pos)
        pos += 16
        if version != FORMAT_VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        params = {}
        for _ in range(nblocks):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
        seed, episodes = struct.unpack_from("<QQ", blob, pos)
        pos += 16
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise ParseError(f"{len(blob) - pos} trailing bytes in checkpoint")
    return PolicyModel(params, fdim, hidden), {"seed": seed, "episodes": episodes, "format_version": version}


def save_checkpoint(path, model: PolicyModel, seed: int = 0, episodes: int = 0) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(dumps_checkpoint(model, seed, episodes))
    return p


def load_checkpoint(path) -> tuple[PolicyModel, dict]:
    return loads_checkpoint(Path(path).read_bytes())
