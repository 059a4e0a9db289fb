"""Binary checkpoint format.

    b"FLEXHDR1"                      8-byte magic
    u32 count                        number of entries
    per entry:
        u32 len, utf-8 name
        u32 ndim, u32 dims[ndim]
        f32 data (little-endian, C order)

Parameters come first, then "<name>.m" and "<name>.v" Adam moments, then
the 0-d entry "step". All integers are little-endian.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .optim import ModelState

MAGIC = b"FLEXHDR1"


class CheckpointError(ValueError):
    pass


def _entries(state: ModelState):
    for name, a in state.params.items():
        yield name, a
    for name in state.params:
        if name in state.m:
            yield name + ".m", state.m[name]
    for name in state.params:
        if name in state.v:
            yield name + ".v", state.v[name]
    yield "step", np.asarray(state.step, dtype=np.float32)


def to_bytes(state: ModelState) -> bytes:
    entries = list(_entries(state))
    chunks = [MAGIC, struct.pack("<I", len(entries))]
    for name, a in entries:
        raw = name.encode("utf-8")
        a = np.asarray(a, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes(order="C"))
    return b"".join(chunks)


def from_bytes(buf: bytes) -> ModelState:
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic, not a FLEXHDR1 checkpoint")
    pos = 8

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = read("<I")
    raw: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = read("<I")
        if pos + nlen > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = read("<I")
        dims = read(f"<{ndim}I") if ndim else ()
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"truncated data for {name!r}")
        raw[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last entry")

    step = int(raw.pop("step", np.float32(0)))
    params = {}
    for name, a in raw.items():
        if (name.endswith(".m") or name.endswith(".v")) and name[:-2] in raw:
            continue
        params[name] = a
    m = {k: raw[k + ".m"] for k in params if k + ".m" in raw}
    v = {k: raw[k + ".v"] for k in params if k + ".v" in raw}
    return ModelState(params, m, v, step)


def save(path: str | os.PathLike, state: ModelState) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(state))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> ModelState:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
