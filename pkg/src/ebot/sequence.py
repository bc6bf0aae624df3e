"""Sequence and detection data model plus the trackable-segment gate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .geometry import BoundingBox

DEFAULT_TRACKABLE_RATIO = 0.5


@dataclass(frozen=True)
class FrameDetections:
    frame_index: int
    boxes: tuple[BoundingBox, ...] = ()


@dataclass(frozen=True)
class Sequence:
    """A temporal segment with per-frame face detections.

    ``frame_size`` is ``(width, height)`` in pixels; it bounds the sliding
    windows used during propagation.
    """

    id: str
    frames: tuple[FrameDetections, ...]
    frame_size: tuple[int, int]
    image_paths: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("sequence must contain at least one frame")
        indices = [f.frame_index for f in self.frames]
        if indices != list(range(len(self.frames))):
            raise ValueError(f"sequence {self.id}: frame indices must be 0..{len(self.frames) - 1}")
        if self.image_paths is not None and len(self.image_paths) != len(self.frames):
            raise ValueError(
                f"sequence {self.id}: {len(self.image_paths)} image paths for {len(self.frames)} frames"
            )

    @property
    def length(self) -> int:
        return len(self.frames)

    def detections(self, frame_index: int) -> tuple[BoundingBox, ...]:
        return self.frames[frame_index].boxes


@dataclass(frozen=True)
class Seed:
    tracklet_id: int
    seed_frame: int
    box: BoundingBox


def trackable_ratio(seq: Sequence) -> float:
    with_faces = sum(1 for f in seq.frames if len(f.boxes) > 0)
    return with_faces / seq.length


def is_trackable_segment(seq: Sequence, ratio_threshold: float = DEFAULT_TRACKABLE_RATIO) -> bool:
    # inclusive: a segment exactly at the threshold is kept
    if not 0.0 <= ratio_threshold <= 1.0:
        raise ValueError(f"ratio_threshold must lie in [0, 1], got {ratio_threshold}")
    return trackable_ratio(seq) >= ratio_threshold


def extract_seeds(seq: Sequence) -> list[Seed]:
    """Every detection becomes a seed.

    Ids follow (frame, x, y, w, h) order so that downstream grouping, which
    opens bags in id order, is reproducible whatever order the detector
    listed its boxes in.
    """
    entries = []
    for frame in seq.frames:
        for box in frame.boxes:
            entries.append((frame.frame_index, box.x, box.y, box.w, box.h, box))
    entries.sort(key=lambda e: e[:5])
    return [Seed(tracklet_id=i, seed_frame=e[0], box=e[5]) for i, e in enumerate(entries)]
