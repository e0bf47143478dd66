"""Single-file archive of named float arrays.

Byte layout (all integers little-endian, no alignment or padding):

    magic       8 bytes   b"TNSARC1\\n"
    count       u64       number of entries
    entry*      repeated ``count`` times, in write order:
        name_len    u64
        name        UTF-8 bytes
        dtype_tag   u8        1 = float32, 2 = float64
        rank        u64
        extents     rank x u64
        data        prod(extents) x itemsize raw little-endian values

Entries are written in sorted-name order so identical states serialize to
identical bytes.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSARC1\n"

_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays to ``path``; only float32/float64 entries are valid."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<Q", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        tag = _TAG_FOR.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BQ", tag, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    path.write_bytes(b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read an archive back into a name -> ndarray dict."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a tensor archive (bad magic)")
    view = memoryview(raw)
    offset = 8

    def take(n):
        nonlocal offset
        if offset + n > len(raw):
            raise CheckpointError(f"{path}: truncated archive")
        piece = view[offset : offset + n]
        offset += n
        return piece

    (count,) = struct.unpack("<Q", take(8))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<Q", take(8))
        name = bytes(take(name_len)).decode("utf-8")
        tag, rank = struct.unpack("<BQ", take(9))
        dtype = _DTYPE_TAGS.get(tag)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for entry {name!r}")
        extents = struct.unpack(f"<{rank}Q", take(8 * rank))
        n_values = int(np.prod(extents)) if rank else 1
        data = np.frombuffer(take(n_values * dtype.itemsize), dtype=dtype)
        out[name] = data.reshape(extents).astype(dtype.newbyteorder("="))
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last entry")
    return out
