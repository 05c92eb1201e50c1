"""Flat named-tensor archive used for checkpoints and weight exchange.

Layout (all integers little-endian u32):

    magic b"D3SK" | version | entry count
    per entry: name length | name (UTF-8) | rank | extents... | payload

Payloads are raw little-endian float32 in C order. Entries are written
sorted by name so the same mapping always produces the same bytes, and
round-trips are bit-exact.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"D3SK"
VERSION = 1


class ArchiveError(ValueError):
    """Malformed or truncated archive bytes."""


def dump_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = tensors[name]
        if np.asarray(arr).dtype != np.float32:
            raise ArchiveError(f"entry '{name}' must be float32, "
                               f"got {np.asarray(arr).dtype}")
        # note: ascontiguousarray would promote 0-d entries to 1-d
        data = np.asarray(arr, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(data.tobytes(order="C"))
    return b"".join(out)


def load_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ArchiveError("bad magic; not a tensor archive")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise ArchiveError("truncated archive")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if rank else 4
        arr = np.frombuffer(take(nbytes), dtype="<f4").reshape(shape)
        if name in tensors:
            raise ArchiveError(f"duplicate entry name '{name}'")
        tensors[name] = arr.copy()
    if pos != len(blob):
        raise ArchiveError(f"{len(blob) - pos} trailing bytes after last entry")
    return tensors


def save_archive(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_tensors(tensors))


def load_archive(path) -> dict[str, np.ndarray]:
    return load_tensors(Path(path).read_bytes())
