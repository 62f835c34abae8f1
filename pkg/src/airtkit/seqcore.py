"""Core data types, the ``.airt`` sequence format and per-pixel centering.

Pixel ordering is row-major everywhere: pixel ``n = y * n_x + x``.
Boxes are half-open pixel regions ``[x1, x2) x [y1, y2)``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError

MAGIC = b"AIRT"
VERSION = 1
# magic, version u16, reserved u16, n_t u32, n_y u32, n_x u32, frame_rate f32
_HEADER = struct.Struct("<4sHHIIIf")
HEADER_SIZE = _HEADER.size
assert HEADER_SIZE == 24


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise FormatError(f"non-finite box coordinate in {self!r}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise FormatError(f"inverted box {self.as_list()}")

    @classmethod
    def from_seq(cls, values) -> "BBox":
        values = list(values)
        if len(values) != 4:
            raise FormatError(f"box needs 4 coordinates, got {len(values)}")
        try:
            return cls(*(float(v) for v in values))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"non-numeric box coordinate in {values!r}") from exc

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def clamp(self, shape) -> "BBox":
        """Clip to an image of ``shape == (n_y, n_x)``."""
        n_y, n_x = shape
        x1 = min(max(self.x1, 0.0), n_x)
        x2 = min(max(self.x2, 0.0), n_x)
        y1 = min(max(self.y1, 0.0), n_y)
        y2 = min(max(self.y2, 0.0), n_y)
        return BBox(x1, y1, x2, y2)

    def pixel_slices(self, shape) -> tuple[slice, slice]:
        """Row/column slices of the pixels lying fully inside the clamped box."""
        b = self.clamp(shape)
        c0, c1 = math.ceil(b.x1), math.floor(b.x2)
        r0, r1 = math.ceil(b.y1), math.floor(b.y2)
        return slice(r0, max(r0, r1)), slice(c0, max(c0, c1))

    def pixel_count(self, shape) -> int:
        rows, cols = self.pixel_slices(shape)
        return (rows.stop - rows.start) * (cols.stop - cols.start)


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


@dataclass(frozen=True)
class RoiLabels:
    defect_box: BBox
    sound_box: BBox
    source: str = "manual"

    def __post_init__(self):
        if intersection_area(self.defect_box, self.sound_box) > 0:
            raise FormatError("defect_box and sound_box overlap")
        if self.sound_box.area < 25:
            raise FormatError(
                f"sound_box area {self.sound_box.area:g} < 25 pixels; noise level not estimable"
            )

    def to_dict(self) -> dict:
        return {
            "defect_box": self.defect_box.as_list(),
            "sound_box": self.sound_box.as_list(),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoiLabels":
        try:
            return cls(
                BBox.from_seq(d["defect_box"]),
                BBox.from_seq(d["sound_box"]),
                str(d.get("source", "")),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"labels missing field: {exc}") from exc


def write_labels(labels: RoiLabels, path) -> None:
    Path(path).write_text(json.dumps(labels.to_dict(), indent=2) + "\n")


def read_labels(path) -> RoiLabels:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: labels must be a JSON object")
    return RoiLabels.from_dict(doc)


def check_frames(frames) -> np.ndarray:
    """Validate a (n_t, n_y, n_x) stack and return it as contiguous float32."""
    arr = np.asarray(frames)
    if arr.ndim != 3:
        raise FormatError(f"frames must be 3-D (n_t, n_y, n_x), got shape {arr.shape}")
    n_t, n_y, n_x = arr.shape
    if n_t < 2 or n_y < 1 or n_x < 1:
        raise FormatError(f"need n_t >= 2, n_y >= 1, n_x >= 1; got {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise NumericError("frames contain NaN or Inf")
    return arr


@dataclass
class InspectionSequence:
    """A stack of thermograms indexed ``(k, y, x)``."""

    frames: np.ndarray
    frame_rate_hz: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = check_frames(self.frames)
        if not (self.frame_rate_hz > 0 and math.isfinite(self.frame_rate_hz)):
            raise FormatError(f"frame_rate_hz must be > 0, got {self.frame_rate_hz}")
        self.meta = {str(k): str(v) for k, v in self.meta.items()}

    @property
    def n_t(self) -> int:
        return self.frames.shape[0]

    @property
    def n_y(self) -> int:
        return self.frames.shape[1]

    @property
    def n_x(self) -> int:
        return self.frames.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_t) / float(self.frame_rate_hz)

    def pixel_signals(self) -> np.ndarray:
        """Float64 (P, n_t) matrix, one row per pixel in raster order."""
        return self.frames.reshape(self.n_t, -1).T.astype(np.float64)


@dataclass
class StandardizedSequence:
    signals: np.ndarray  # (P, n_t), float64
    pixel_means: np.ndarray  # (P,)
    shape: tuple[int, int, int]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.shape[1], self.shape[2]

    def restore(self) -> np.ndarray:
        """Add the means back; returns a (n_t, n_y, n_x) float64 stack."""
        full = self.signals + self.pixel_means[:, None]
        return full.T.reshape(self.shape)


def standardize(seq: InspectionSequence) -> StandardizedSequence:
    """Subtract each pixel's own temporal mean from its signal."""
    x = seq.pixel_signals()
    means = x.mean(axis=1)
    return StandardizedSequence(x - means[:, None], means, seq.shape)


def extract_roi_stats(img, roi: BBox) -> tuple[float, float, int]:
    """Mean, population std and pixel count inside ``roi``."""
    img = np.asarray(img, dtype=np.float64)
    rows, cols = roi.pixel_slices(img.shape)
    patch = img[rows, cols]
    if patch.size == 0:
        raise FormatError(f"roi {roi.as_list()} does not intersect image of shape {img.shape}")
    mean = float(patch.mean())
    std = float(np.sqrt(np.mean((patch - mean) ** 2)))
    return mean, std, int(patch.size)


def write_sequence(seq: InspectionSequence, path) -> None:
    frames = check_frames(seq.frames)
    n_t, n_y, n_x = frames.shape
    header = _HEADER.pack(MAGIC, VERSION, 0, n_t, n_y, n_x, float(seq.frame_rate_hz))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.astype("<f4", copy=False).tobytes(order="C"))


def read_sequence(path) -> InspectionSequence:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(data) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    _, version, _, n_t, n_y, n_x, rate = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    count = n_t * n_y * n_x
    if count * 4 > len(data) - HEADER_SIZE:
        # covers both truncation and absurd dimensions
        if n_t and n_y and n_x and count * 4 > (1 << 40):
            raise FormatError(f"{path}: dimensions {n_t}x{n_y}x{n_x} overflow", offset=12)
        raise FormatError(
            f"{path}: truncated payload, need {count * 4} bytes, have {len(data) - HEADER_SIZE}",
            offset=len(data),
        )
    if count * 4 < len(data) - HEADER_SIZE:
        raise FormatError(f"{path}: trailing bytes after payload", offset=HEADER_SIZE + count * 4)
    frames = np.frombuffer(data, dtype="<f4", count=count, offset=HEADER_SIZE)
    frames = frames.astype(np.float32).reshape(n_t, n_y, n_x)
    return InspectionSequence(frames, frame_rate_hz=float(rate))
