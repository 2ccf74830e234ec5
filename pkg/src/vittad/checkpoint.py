"""Binary parameter checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"VTAD"
    version u32      currently 1
    count   u32      number of parameter records

followed by ``count`` records:

    name_len u32, name UTF-8 bytes, rank u32, dims rank x u64,
    payload  prod(dims) x float64
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError
from .tensor import Parameter

MAGIC = b"VTAD"
VERSION = 1


def save_checkpoint(path: str | Path, params: Mapping[str, Parameter]) -> None:
    """Write parameters (sorted by name for determinism) to ``path``."""
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            data = np.ascontiguousarray(params[name].data, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint into a name -> float64 array mapping."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, offset)
            offset += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            out[name] = arr.reshape(dims).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return out


def restore_parameters(
    params: Mapping[str, Parameter], state: Mapping[str, np.ndarray], path: str = ""
) -> None:
    """Assign checkpoint arrays into ``params``, validating names and shapes."""
    missing = sorted(set(params) - set(state))
    extra = sorted(set(state) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter set mismatch (missing {missing[:3]}, extra {extra[:3]})"
        )
    for name, param in params.items():
        arr = state[name]
        if arr.shape != param.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {arr.shape}, "
                f"model expects {param.shape}"
            )
        param.assign(arr)
