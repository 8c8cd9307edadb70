"""Little-endian binary formats: feature archives (``M3FA``) and checkpoints (``M3CK``).

Archive layout::

    "M3FA" | version u32 | clip count u32 |
    per clip: class_id u32, clip_id u32, t u16, h u16, w u16, c u16,
              t*h*w*c float32 in (t, h, w, c) row-major order

Checkpoint layout::

    "M3CK" | version u32 | parameter count u32 |
    per parameter: name length u16, UTF-8 name, rank u8, dims u32 * rank,
                   float32 data row-major
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .episode import SPLITS, Dataset, VideoClip
from .errors import BadMagic, ShapeMismatch, TruncatedRecord, UnsupportedVersion

ARCHIVE_MAGIC = b"M3FA"
CHECKPOINT_MAGIC = b"M3CK"
VERSION = 1

_HEADER = struct.Struct("<4sII")
_CLIP = struct.Struct("<IIHHHH")
_F32 = np.dtype("<f4")


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedRecord(
                f"{self.what}: needed {n} bytes at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))


def _read_header(reader: _Reader, magic: bytes) -> int:
    found, version, count = reader.unpack(_HEADER)
    if found != magic:
        raise BadMagic(f"{reader.what}: expected magic {magic!r}, found {found!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{reader.what}: version {version} (supported: {VERSION})")
    return count


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def save_feature_archive(dataset: Dataset, path) -> None:
    parts = [_HEADER.pack(ARCHIVE_MAGIC, VERSION, len(dataset.clips))]
    for clip in dataset.clips:
        t, h, w, c = clip.shape
        if max(t, h, w, c) > 0xFFFF:
            raise ShapeMismatch(f"clip {clip.clip_id}: axis length exceeds u16")
        parts.append(_CLIP.pack(clip.class_id, clip.clip_id, t, h, w, c))
        parts.append(np.ascontiguousarray(clip.frames, dtype=_F32).tobytes())
    _atomic_write(path, b"".join(parts))


def split_from_path(path) -> str:
    stem = Path(path).name.split(".")[0]
    return stem if stem in SPLITS else "base"


def load_feature_archive(path, split: str | None = None) -> Dataset:
    """Read an archive; ``split`` defaults to the file-name stem when it names a split."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    count = _read_header(reader, ARCHIVE_MAGIC)
    clips = []
    for _ in range(count):
        class_id, clip_id, t, h, w, c = reader.unpack(_CLIP)
        n = t * h * w * c
        data = np.frombuffer(reader.take(4 * n), dtype=_F32).astype(np.float32)
        clips.append(VideoClip(data.reshape(t, h, w, c), class_id, clip_id))
    if reader.pos != len(reader.buf):
        raise ShapeMismatch(f"{path}: {len(reader.buf) - reader.pos} trailing bytes after "
                            f"{count} clips")
    return Dataset(clips, split or split_from_path(path))


def save_checkpoint(named: dict, path) -> None:
    """Write ``{dotted name: array}`` in insertion order."""
    parts = [_HEADER.pack(CHECKPOINT_MAGIC, VERSION, len(named))]
    for name, value in named.items():
        arr = np.asarray(value, dtype=_F32)  # keeps 0-d scalars 0-d; tobytes() is C order
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    _atomic_write(path, b"".join(parts))


def load_checkpoint(path, expected_shapes: dict | None = None) -> dict:
    """Read a checkpoint; with ``expected_shapes`` every name and shape is validated."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    count = _read_header(reader, CHECKPOINT_MAGIC)
    named = {}
    for _ in range(count):
        (length,) = struct.unpack("<H", reader.take(2))
        name = reader.take(length).decode("utf-8")
        (rank,) = struct.unpack("<B", reader.take(1))
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        named[name] = np.frombuffer(reader.take(4 * n), dtype=_F32).astype(np.float32).reshape(dims)
    if reader.pos != len(reader.buf):
        raise ShapeMismatch(f"{path}: trailing bytes after {count} parameters")
    if expected_shapes is not None:
        missing = sorted(set(expected_shapes) - set(named))
        extra = sorted(set(named) - set(expected_shapes))
        if missing or extra:
            raise ShapeMismatch(f"{path}: missing parameters {missing}, unexpected {extra}")
        for name, shape in expected_shapes.items():
            if named[name].shape != tuple(shape):
                raise ShapeMismatch(
                    f"{path}: {name} has shape {named[name].shape}, config expects {tuple(shape)}")
    return named
