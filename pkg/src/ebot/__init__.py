"""Offline multi-face tracking for low-frame-rate photo-streams with extended bags-of-tracklets."""

from .geometry import BoundingBox, intersection_area, iou
from .sequence import FrameDetections, Seed, Sequence, extract_seeds, is_trackable_segment

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "FrameDetections",
    "Seed",
    "Sequence",
    "extract_seeds",
    "intersection_area",
    "iou",
    "is_trackable_segment",
]
