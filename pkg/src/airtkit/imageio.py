"""8-bit PGM export and the full-precision ``.aimg`` sidecar."""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError

AIMG_MAGIC = b"AIMG"
_AIMG_HEADER = struct.Struct("<4sII")


def to_uint8(img) -> np.ndarray:
    """Min-max map to 0..255; a constant image maps to 128 everywhere."""
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise NumericError("cannot export non-finite image")
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.full(img.shape, 128, dtype=np.uint8)
    return np.rint((img - lo) / (hi - lo) * 255.0).astype(np.uint8)


def pgm_bytes(img) -> bytes:
    q = to_uint8(img)
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode() + q.tobytes()


def parse_pgm(data: bytes) -> np.ndarray:
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise FormatError("not a binary PGM (P5) image", offset=0)
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"only 8-bit PGM supported, maxval={maxval}", offset=m.start(3))
    body = data[m.end() :]
    if len(body) < w * h:
        raise FormatError("truncated PGM payload", offset=len(data))
    return np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w)


def write_pgm(img, path) -> None:
    Path(path).write_bytes(pgm_bytes(img))


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def write_aimg(img, path) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError(f"aimg stores 2-D images, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(_AIMG_HEADER.pack(AIMG_MAGIC, h, w))
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_aimg(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != AIMG_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {AIMG_MAGIC!r}", offset=0)
    if len(data) < _AIMG_HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    _, h, w = _AIMG_HEADER.unpack_from(data, 0)
    if len(data) - _AIMG_HEADER.size != 4 * h * w:
        raise FormatError(f"{path}: payload size does not match {h}x{w}", offset=_AIMG_HEADER.size)
    return np.frombuffer(data, dtype="<f4", offset=_AIMG_HEADER.size).astype(np.float32).reshape(h, w)
