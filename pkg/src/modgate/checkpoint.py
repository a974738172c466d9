"""Flat named-parameter checkpoints, little-endian binary, magic ``AMMLCKPT1``.

Per parameter: u32 name length, UTF-8 name, u32 rank, u32 extents, then the
float64 values in row-major order.  Parameters are written sorted by name so
saves are byte-reproducible.  Round trips are bitwise lossless.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataFormatError

CHECKPOINT_MAGIC = b"AMMLCKPT1"
_MAX_RANK = 8  # sanity bound; nothing here is higher than rank 2


def save_checkpoint(state, path):
    """Write a name -> float64 array mapping."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    for name in sorted(state):
        encoded = name.encode("utf-8")
        arr = np.asarray(state[name], dtype=np.float64)
        if not arr.flags.c_contiguous:  # ascontiguousarray would flatten rank 0
            arr = np.ascontiguousarray(arr)
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            out += struct.pack("<I", extent)
        out += arr.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(out)


def load_checkpoint(path):
    """Read a checkpoint back into a name -> array dict, validating as it goes."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise DataFormatError(
                f"checkpoint: truncated reading {what} at offset {pos} "
                f"(need {n} bytes, have {len(data) - pos})"
            )
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    magic = take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"checkpoint: bad magic {magic!r} at offset 0")
    state = {}
    while pos < len(data):
        at = pos
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        if name_len == 0 or name_len > 4096:
            raise DataFormatError(f"checkpoint: implausible name length {name_len} at offset {at}")
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise DataFormatError(f"checkpoint: name is not UTF-8 at offset {at + 4}") from None
        if name in state:
            raise DataFormatError(f"checkpoint: duplicate parameter {name!r} at offset {at}")
        at = pos
        (rank,) = struct.unpack("<I", take(4, f"{name} rank"))
        if rank > _MAX_RANK:
            raise DataFormatError(f"checkpoint: implausible rank {rank} at offset {at}")
        shape = tuple(
            struct.unpack("<I", take(4, f"{name} extent {i}"))[0] for i in range(rank)
        )
        count = 1
        for extent in shape:
            count *= extent
        raw = take(8 * count, f"{name} values")
        state[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return state
