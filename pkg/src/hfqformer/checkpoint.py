"""Binary checkpoint files.

Layout, all little-endian::

    b"HFQC"  u32 version  u32 entry_count
    per entry: u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], f32 data (row-major)
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, SchemaError

MAGIC = b"HFQC"
VERSION = 1


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(blob: bytes) -> dict[str, np.ndarray]:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint: bad magic bytes")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    out: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("checkpoint entry name is not valid UTF-8") from None
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        if name in out:
            raise FormatError(f"duplicate checkpoint entry {name!r}")
        out[name] = data.astype(np.float32)
    if r.pos != len(blob):
        raise FormatError(f"{len(blob) - r.pos} trailing bytes after last checkpoint entry")
    return out


def write_atomic(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(module, path) -> None:
    write_atomic(path, encode(module.state_dict()))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def load_checkpoint(module, path) -> None:
    """Load every named tensor of ``module`` from ``path``.

    The file is fully parsed and checked against the module before any
    tensor is assigned, so a failed load leaves the module untouched.
    """
    stored = read_checkpoint(path)
    expected = dict(module.named_tensors())
    for name, tensor in expected.items():
        if name not in stored:
            raise SchemaError(f"checkpoint is missing tensor {name!r}")
        if stored[name].shape != tensor.shape:
            raise SchemaError(
                f"tensor {name!r} has shape {stored[name].shape} in checkpoint, model expects {tensor.shape}"
            )
    extra = sorted(set(stored) - set(expected))
    if extra:
        raise SchemaError(f"checkpoint has tensors the model does not: {', '.join(extra)}")
    for name, tensor in expected.items():
        tensor.data = stored[name].copy()
        tensor.grad = None
