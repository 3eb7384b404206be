# ============================================
#   Suppress — Core geometry & raster types
# ============================================

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from suppress.errors import FormatError, InvalidBox, NoOverlap, ScoreOutOfRange


# =====================================================
#   IMAGE
# =====================================================

@dataclass(frozen=True, eq=False)
class Image:
    """
    Owned H×W×3 raster with 8-bit channels, row-major.
    The array is copied on construction and made read-only.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise FormatError(f"Image pixels must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise FormatError(f"Image must be at least 1x1, got {arr.shape[1]}x{arr.shape[0]}")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def filled(cls, width: int, height: int, color) -> Image:
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:, :] = color
        return cls(arr)

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


# =====================================================
#   BOXES / DETECTIONS / ANNOTATIONS
# =====================================================

@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, top-left origin, (x, y, w, h) in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidBox(f"BBox.{name} is not finite: {value}")
            object.__setattr__(self, name, value)
        if self.w <= 0 or self.h <= 0:
            raise InvalidBox(f"BBox needs w > 0 and h > 0, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BBox
    score: float

    def __post_init__(self):
        score = float(self.score)
        if not (0.0 <= score <= 1.0):
            raise ScoreOutOfRange(f"Detection score {score} outside [0, 1] ({self.image_id})")
        object.__setattr__(self, "score", score)


@dataclass(frozen=True)
class Annotation:
    image_id: str
    box: BBox
    tags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))

    def tag_value(self, key: str):
        """Value of a "key=value" tag, or None."""
        prefix = f"{key}="
        for tag in sorted(self.tags):
            if tag.startswith(prefix):
                return tag[len(prefix):]
        return None


# =====================================================
#   IOU
# =====================================================

def _edge_area(box: BBox) -> float:
    return (box.x2 - box.x) * (box.y2 - box.y)


def iou(a: BBox, b: BBox) -> float:
    """
    Areas come from the same edge differences as the intersection,
    so iou(a, a) == 1.0 exactly for any finite box.
    """
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = _edge_area(a) + _edge_area(b) - inter
    return min(1.0, inter / union)


# =====================================================
#   CROP
# =====================================================

def clamp_box(img: Image, box: BBox) -> tuple[int, int, int, int]:
    """
    Pixel bounds (x0, y0, x1, y1) covered by `box`, clamped to the image.
    Fractional edges are widened to whole pixels.
    """
    x0 = max(0, int(math.floor(box.x)))
    y0 = max(0, int(math.floor(box.y)))
    x1 = min(img.width, int(math.ceil(box.x2)))
    y1 = min(img.height, int(math.ceil(box.y2)))
    return x0, y0, x1, y1


def crop(img: Image, box: BBox) -> Image:
    x0, y0, x1, y1 = clamp_box(img, box)
    if x1 <= x0 or y1 <= y0:
        raise NoOverlap(
            f"Box ({box.x}, {box.y}, {box.w}, {box.h}) does not overlap "
            f"{img.width}x{img.height} image"
        )
    return Image(img.pixels[y0:y1, x0:x1])


# =====================================================
#   BILINEAR RESIZE (corner-aligned)
# =====================================================

def _sample_positions(size_in: int, size_out: int) -> np.ndarray:
    if size_out == 1:
        return np.array([(size_in - 1) / 2.0])
    return np.arange(size_out, dtype=np.float64) * (size_in - 1) / (size_out - 1)


def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    if out_w < 1 or out_h < 1:
        raise FormatError(f"Resize target must be at least 1x1, got {out_w}x{out_h}")

    src = img.pixels.astype(np.float64)
    ys = _sample_positions(img.height, out_h)
    xs = _sample_positions(img.width, out_w)

    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, img.height - 1)
    x1 = np.minimum(x0 + 1, img.width - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy

    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))
