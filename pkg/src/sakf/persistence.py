"""Single-file, versioned, checksummed model container.

Layout (all integers little-endian)::

    4 bytes   magic b"SAKF"
    u16       format version (1)
    u32 + n   config block: UTF-8 JSON, sorted keys, compact separators
    u32       label count, then per label: u16 byte length + UTF-8 bytes
    dict      VD_F: u32 rows, u32 cols (128), u32 requested k, rows*cols f32
    dict      VD_B: same layout
    svm       u32 classes, u32 width (features + 1), f64 C, classes*width f64
    u32       CRC-32 of every preceding byte
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .classify import LinearSVMModel
from .errors import CorruptModelError, NotAModelError, StorageError, UnsupportedVersionError
from .features import DIM
from .filtering import DualDictionaries
from .pipeline import PipelineConfig, TrainedModel
from .vocab import VisualDictionary

MAGIC = b"SAKF"
VERSION = 1


def _json_block(model: TrainedModel) -> bytes:
    payload = {"config": model.config.to_dict(), "fallbacks": dict(model.fallbacks)}
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_dict(buf: io.BytesIO, d: VisualDictionary):
    rows, cols = d.words.shape
    buf.write(struct.pack("<III", rows, cols, d.requested_k))
    buf.write(d.words.astype("<f4").tobytes())


def encode_model(model: TrainedModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    block = _json_block(model)
    buf.write(struct.pack("<I", len(block)))
    buf.write(block)
    labels = [str(c).encode("utf-8") for c in model.svm.classes]
    buf.write(struct.pack("<I", len(labels)))
    for lab in labels:
        buf.write(struct.pack("<H", len(lab)))
        buf.write(lab)
    _write_dict(buf, model.dictionaries.fg)
    _write_dict(buf, model.dictionaries.bg)
    w = model.svm.weights
    buf.write(struct.pack("<IId", w.shape[0], w.shape[1], model.svm.C))
    buf.write(w.astype("<f8").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptModelError("model file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size), dtype=dtype).astype(np.float64)


def _read_dict(r: _Reader) -> VisualDictionary:
    rows, cols, requested = r.unpack("<III")
    if cols != DIM or rows < 1:
        raise CorruptModelError(f"dictionary has shape {rows}x{cols}, expected Kx{DIM}")
    return VisualDictionary(r.array("<f4", rows * cols).reshape(rows, cols), requested)


def decode_model(data: bytes, source: str = "<bytes>") -> TrainedModel:
    if len(data) < 6 or data[:4] != MAGIC:
        raise NotAModelError(f"{source}: not a SAKF model")
    (version,) = struct.unpack("<H", data[4:6])
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{source}: model format version {version} is not supported by this reader (version {VERSION})")
    if len(data) < 10:
        raise CorruptModelError(f"{source}: model file is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptModelError(f"{source}: checksum mismatch, file is corrupt or truncated")
    r = _Reader(body)
    r.pos = 6
    try:
        (n,) = r.unpack("<I")
        meta = json.loads(r.take(n).decode("utf-8"))
        config = PipelineConfig.from_dict(meta["config"])
        (n_labels,) = r.unpack("<I")
        labels = []
        for _ in range(n_labels):
            (ln,) = r.unpack("<H")
            labels.append(r.take(ln).decode("utf-8"))
        fg = _read_dict(r)
        bg = _read_dict(r)
        n_cls, width, c = r.unpack("<IId")
        weights = r.array("<f8", n_cls * width).reshape(n_cls, width)
    except CorruptModelError as exc:
        raise CorruptModelError(f"{source}: {exc}") from None
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{source}: malformed model ({exc})") from None
    if r.pos != len(body):
        raise CorruptModelError(f"{source}: {len(body) - r.pos} unexpected trailing bytes")
    if n_cls != len(labels):
        raise CorruptModelError(f"{source}: {n_cls} weight vectors for {len(labels)} labels")
    return TrainedModel(config, DualDictionaries(fg, bg), LinearSVMModel(labels, weights, c),
                        dict(meta.get("fallbacks", {})))


def save_model(model: TrainedModel, path) -> None:
    """Write atomically: a temp file in the target directory, then rename."""
    path = Path(path)
    data = encode_model(model)
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise StorageError(f"{path}: cannot write model ({exc.strerror or exc})") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"{path}: cannot read model ({exc.strerror or exc})") from exc
    return decode_model(data, str(path))
