"""Versioned binary checkpoint container.

Layout (little-endian)::

    magic "CASLSTM\\0" | u16 version | 32-byte sha256 of the config text | u32 count
    count x ( u16 name length | name (utf-8) | u8 dtype tag | u8 ndim | ndim x u64 | payload )
    u32 crc32 of everything above

Text metadata (config, vocabulary, labels) is stored as ``uint8`` tensors
under ``meta.*`` names.
"""

import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"CASLSTM\0"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
TAGS = {dt: tag for tag, dt in DTYPES.items()}


class CheckpointError(ValueError):
    pass


def text_tensor(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def tensor_text(arr):
    return np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8")


def dumps(tensors, config_text):
    """Serialize ``name -> array`` plus the config text; names are written sorted."""
    tensors = dict(tensors)
    tensors["meta.config"] = text_tensor(config_text)
    parts = [MAGIC, struct.pack("<H", VERSION), hashlib.sha256(config_text.encode("utf-8")).digest(),
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        tag = TAGS.get(arr.dtype.newbyteorder("<"))
        if tag is None:
            raise CheckpointError(f"cannot store dtype {arr.dtype} for {name!r}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob):
    """Parse a checkpoint; returns ``(tensors, config_text)``."""
    if len(blob) < len(MAGIC) + 2 + 32 + 4 + 4 or not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint is corrupted (checksum mismatch)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<H", body, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = body[pos + 2:pos + 34]
    (count,) = struct.unpack_from("<I", body, pos + 34)
    pos += 38
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            tag, ndim = struct.unpack_from("<BB", body, pos)
            shape = struct.unpack_from(f"<{ndim}Q", body, pos + 2)
            pos += 2 + 8 * ndim
            dt = DTYPES[tag]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(body):
                raise CheckpointError(f"tensor {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(body, dtype=dt, count=size // dt.itemsize,
                                          offset=pos).reshape(shape).astype(dt.newbyteorder("="))
            pos += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    if "meta.config" not in tensors:
        raise CheckpointError("checkpoint has no config")
    config_text = tensor_text(tensors.pop("meta.config"))
    if hashlib.sha256(config_text.encode("utf-8")).digest() != digest:
        raise CheckpointError("config digest does not match the stored config")
    return tensors, config_text


def save(path, tensors, config_text):
    Path(path).write_bytes(dumps(tensors, config_text))


def load(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(blob)
