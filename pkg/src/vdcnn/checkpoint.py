"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"VDCN"  u16 version  u8 precision-bits
    u32 spec-length  spec text (key=value lines, UTF-8)
    repeated until EOF:
        u32 name-length  name (UTF-8)  u32 rank  u64 extent * rank
        raw IEEE-754 values, little-endian, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .autodiff import precision
from .model import ArchSpec, SpecError, VDCNN

MAGIC = b"VDCN"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def _dtype_for(bits: int) -> np.dtype:
    return np.dtype("<f8") if bits == 64 else np.dtype("<f4")


def save(model: VDCNN, path: Union[str, Path]) -> None:
    state = model.state()
    bits = 64 if model.embedding.data.dtype == np.float64 else 32
    dt = _dtype_for(bits)
    spec = model.spec.to_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<HB", VERSION, bits), struct.pack("<I", len(spec)), spec]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"file ends inside {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.buf)


def load(path: Union[str, Path]) -> VDCNN:
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic)")
    version, bits = r.unpack("<HB", "header")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {VERSION}")
    if bits not in (32, 64):
        raise CheckpointError(f"{path}: unknown precision tag {bits}")
    (spec_len,) = r.unpack("<I", "spec length")
    try:
        spec = ArchSpec.from_text(r.take(spec_len, "spec").decode("utf-8"))
    except (SpecError, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: invalid embedded spec: {exc}") from exc

    dt = _dtype_for(bits)
    tensors = {}
    while not r.done:
        (n,) = r.unpack("<I", "tensor name length")
        name = r.take(n, "tensor name").decode("utf-8", errors="replace")
        (rank,) = r.unpack("<I", f"rank of {name}")
        shape = r.unpack(f"<{rank}Q", f"extents of {name}")
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(count * dt.itemsize, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape)

    with precision(bits):
        model = VDCNN(spec, seed=0)
    state = model.state()
    missing = [k for k in state if k not in tensors]
    if missing:
        raise TruncatedCheckpointError(f"{path}: missing tensors {missing[:3]}")
    extra = [k for k in tensors if k not in state]
    if extra:
        raise ShapeMismatchError(f"{path}: unexpected tensors {extra[:3]}")
    for name, arr in state.items():
        if tensors[name].shape != arr.shape:
            raise ShapeMismatchError(f"{path}: {name} has shape {tensors[name].shape}, spec implies {arr.shape}")
        arr[...] = tensors[name]
    return model
