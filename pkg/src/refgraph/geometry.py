"""Axis-aligned bounding-box algebra: areas, IoU, overlap ratios, image clamping."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

__all__ = [
    "BBox",
    "ImageDims",
    "GeometryError",
    "DegenerateBoxWarning",
    "area",
    "intersection_area",
    "iou",
    "overlap_ratio_smaller",
    "clamp_to_image",
    "box_from_record",
    "round_pixel",
]


class GeometryError(ValueError):
    """A box violates its invariants or cannot be used (e.g. lies fully outside the image)."""


class DegenerateBoxWarning(UserWarning):
    """A zero-area box made an overlap ratio undefined; 0 was returned instead."""


@dataclass(frozen=True)
class BBox:
    """Corner-form box (x1, y1, x2, y2) in absolute pixels, origin at top-left.

    Coordinates stay 64-bit floats end to end; nothing is rounded before
    serialization so comparisons near decision thresholds are not perturbed.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise GeometryError(
                f"box corners out of order: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class ImageDims:
    """Pixel dimensions of an image."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"image dims must be positive: {self.width}x{self.height}")


def area(b: BBox) -> float:
    """Box area in square pixels; zero for degenerate boxes."""
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 by convention when the union has zero area."""
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def overlap_ratio_smaller(a: BBox, b: BBox) -> float:
    """Intersection area relative to the smaller of the two boxes.

    A zero-area smaller box makes the ratio undefined; 0 is returned and a
    DegenerateBoxWarning is emitted so batch runs keep going.
    """
    smaller = min(area(a), area(b))
    if smaller <= 0.0:
        warnings.warn("zero-area box in overlap ratio; returning 0", DegenerateBoxWarning, stacklevel=2)
        return 0.0
    return intersection_area(a, b) / smaller


def clamp_to_image(b: BBox, dims: ImageDims) -> BBox:
    """Clip box coordinates into [0, width] x [0, height].

    Raises GeometryError when the box lies entirely outside the image, since
    such a box cannot produce a usable crop.
    """
    if b.x1 >= dims.width or b.x2 <= 0 or b.y1 >= dims.height or b.y2 <= 0:
        raise GeometryError(f"box {b.as_tuple()} entirely outside image {dims.width}x{dims.height}")
    return BBox(
        min(max(b.x1, 0.0), float(dims.width)),
        min(max(b.y1, 0.0), float(dims.height)),
        min(max(b.x2, 0.0), float(dims.width)),
        min(max(b.y2, 0.0), float(dims.height)),
    )


def box_from_record(record: dict) -> BBox:
    """Build a BBox from a {"form": "xyxy"|"xywh", "values": [4 reals]} record.

    Detector and annotation files declare their coordinate form explicitly;
    width/height-form boxes are converted to corner form here, at ingestion.
    """
    try:
        form = record["form"]
        values = record["values"]
    except (TypeError, KeyError) as exc:
        raise GeometryError(f"box record must carry 'form' and 'values': {record!r}") from exc
    if not isinstance(values, (list, tuple)) or len(values) != 4:
        raise GeometryError(f"box record needs exactly 4 values, got {values!r}")
    vals = [float(v) for v in values]
    if form == "xyxy":
        return BBox(*vals)
    if form == "xywh":
        return BBox.from_xywh(*vals)
    raise GeometryError(f"unknown box form {form!r} (expected 'xyxy' or 'xywh')")


def round_pixel(value: float) -> int:
    """Round half away from zero, the convention used when serializing coordinates."""
    if value >= 0:
        return int(math.floor(value + 0.5))
    return int(math.ceil(value - 0.5))
