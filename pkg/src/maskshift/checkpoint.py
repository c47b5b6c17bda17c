"""Binary checkpoint format.

Layout (little-endian):
    magic   8 bytes  b"MSKSHFT1"
    version u32
    meta    u32 length + UTF-8 JSON (config snapshot, epoch, rng states,
                                     per-optimizer step counters, shapes of
                                     the replay-buffer entries)
    tensors u32 count, then per tensor:
        name   u16 length + UTF-8
        ndim   u8, dims u32 each
        data   float32 raw values
    digest  8 bytes  BLAKE2b-64 of everything above

Save -> load roundtrips every array bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"MSKSHFT1"
VERSION = 1


def _digest(body):
    return hashlib.blake2b(body, digest_size=8).digest()


def save(path, meta, arrays):
    """meta: JSON-serializable dict; arrays: ordered name -> float32 ndarray."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta_b = json.dumps(meta).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_b)))
    parts.append(meta_b)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(_digest(body))


class CheckpointError(ValueError):
    pass


def load(path):
    """Returns (meta, arrays). Rejects wrong magic, version, truncation or
    checksum mismatch."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + 8:
        raise CheckpointError("%s: truncated checkpoint" % path)
    body, digest = blob[:-8], blob[-8:]
    if body[:8] != MAGIC:
        raise CheckpointError("%s: bad magic" % path)
    if _digest(body) != digest:
        raise CheckpointError("%s: checksum mismatch" % path)
    off = 8
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != VERSION:
        raise CheckpointError("%s: unsupported version %d" % (path, version))
    (meta_len,) = struct.unpack_from("<I", body, off)
    off += 4
    meta = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from("<%dI" % ndim, body, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape)
        arrays[name] = arr.copy()
        off += 4 * size
    if off != len(body):
        raise CheckpointError("%s: trailing bytes in body" % path)
    return meta, arrays
