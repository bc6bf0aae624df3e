"""Axis-aligned boxes and overlap measures.

Boxes live in continuous pixel coordinates as ``(x, y, w, h)`` with the
top-left corner at ``(x, y)``. Intersections use half-open extents
``[x, x + w)`` so boxes that only touch along an edge do not overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, order=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def sort_key(self) -> tuple[float, float, float, float]:
        """Ordering used for deterministic tie-breaks: y, then x, then w, then h."""
        return (self.y, self.x, self.w, self.h)

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        x, y, w, h = values
        return cls(float(x), float(y), float(w), float(h))


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    if a == b:
        return 1.0
    return inter / (a.area + b.area - inter)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float array of ``x, y, w, h`` rows."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=float)
    return np.array([b.as_list() for b in boxes], dtype=float)


def array_to_boxes(arr: np.ndarray) -> list[BoundingBox]:
    return [BoundingBox(float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in arr]


def iou_many(box: BoundingBox, arr: np.ndarray) -> np.ndarray:
    """IoU between one box and every row of an ``(N, 4)`` array."""
    if arr.shape[0] == 0:
        return np.zeros(0)
    x1 = np.maximum(arr[:, 0], box.x)
    y1 = np.maximum(arr[:, 1], box.y)
    x2 = np.minimum(arr[:, 0] + arr[:, 2], box.x2)
    y2 = np.minimum(arr[:, 1] + arr[:, 3], box.y2)
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = arr[:, 2] * arr[:, 3] + box.area - inter
    return inter / union
