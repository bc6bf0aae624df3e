"""Candidate windows and bidirectional seed propagation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import BoundingBox, array_to_boxes, boxes_to_array
from .matching import SimilarityEngine
from .sequence import Seed, Sequence, extract_seeds

DEFAULT_STRIDE_FRAC = 0.25
DEFAULT_SCALES = (0.8, 1.0, 1.25)


@dataclass(frozen=True)
class Tracklet:
    """One box and one match score per frame, grown from a single seed."""

    id: int
    seed: Seed
    boxes: tuple[BoundingBox, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.boxes) != len(self.scores):
            raise ValueError("tracklet boxes and scores differ in length")

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class CandidateSet:
    frame_index: int
    windows: np.ndarray  # (N, 4) rows of x, y, w, h sorted by (y, x, w, h)

    def boxes(self) -> list[BoundingBox]:
        return array_to_boxes(self.windows)

    def __len__(self) -> int:
        return self.windows.shape[0]


def _with_far_edge(starts: np.ndarray, last: float) -> np.ndarray:
    # faces flush with the right or bottom border need a window there too
    if last - starts[-1] > 1e-9:
        return np.append(starts, last)
    return starts


def sliding_windows(frame_size, box_w: float, box_h: float, stride: float) -> np.ndarray:
    """Grid of ``box_w x box_h`` windows (shrunk to the frame if larger).

    Positions step by ``stride`` from the origin; one extra column and row
    sits flush with the far edges when the stride does not land there.
    """
    width, height = frame_size
    ww = min(box_w, width)
    wh = min(box_h, height)
    nx = int(math.floor((width - ww) / stride + 1e-9)) + 1
    ny = int(math.floor((height - wh) / stride + 1e-9)) + 1
    xs = _with_far_edge(np.arange(nx) * stride, width - ww)
    ys = _with_far_edge(np.arange(ny) * stride, height - wh)
    gx, gy = np.meshgrid(xs, ys)
    n = gx.size
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(n, ww), np.full(n, wh)])


def sort_windows(windows: np.ndarray) -> np.ndarray:
    """Deduplicate rows and order them by (y, x, w, h)."""
    if windows.shape[0] == 0:
        return windows
    order = np.lexsort((windows[:, 3], windows[:, 2], windows[:, 0], windows[:, 1]))
    ordered = windows[order]
    keep = np.ones(ordered.shape[0], dtype=bool)
    keep[1:] = np.any(ordered[1:] != ordered[:-1], axis=1)
    return ordered[keep]


def generate_candidates(
    seq: Sequence,
    seed: Seed,
    frame_index: int,
    stride_frac: float = DEFAULT_STRIDE_FRAC,
    scales=DEFAULT_SCALES,
) -> CandidateSet:
    """Sliding windows sized after the seed, plus every detection in the frame."""
    if stride_frac <= 0:
        raise ValueError("stride_frac must be positive")
    if len(scales) == 0:
        raise ValueError("at least one window scale is required")
    stride = stride_frac * min(seed.box.w, seed.box.h)
    parts = [
        sliding_windows(seq.frame_size, s * seed.box.w, s * seed.box.h, stride)
        for s in scales
    ]
    parts.append(boxes_to_array(seq.detections(frame_index)))
    return CandidateSet(frame_index, sort_windows(np.concatenate(parts, axis=0)))


def propagate_seed(
    engine: SimilarityEngine,
    seq: Sequence,
    seed: Seed,
    stride_frac: float = DEFAULT_STRIDE_FRAC,
    scales=DEFAULT_SCALES,
) -> Tracklet:
    """Search every frame independently for the window most similar to the seed.

    Windows are sorted by (y, x, w, h), so ``argmax`` resolves ties toward
    the smallest such key.
    """
    boxes = []
    scores = []
    for k in range(seq.length):
        if k == seed.seed_frame:
            boxes.append(seed.box)
            scores.append(1.0)
            continue
        cands = generate_candidates(seq, seed, k, stride_frac, scales)
        s = engine.score(seed, k, cands.windows)
        best = int(np.argmax(s))
        row = cands.windows[best]
        boxes.append(BoundingBox(float(row[0]), float(row[1]), float(row[2]), float(row[3])))
        scores.append(float(s[best]))
    return Tracklet(id=seed.tracklet_id, seed=seed, boxes=tuple(boxes), scores=tuple(scores))


def build_tracklets(
    engine: SimilarityEngine,
    seq: Sequence,
    seeds=None,
    stride_frac: float = DEFAULT_STRIDE_FRAC,
    scales=DEFAULT_SCALES,
    workers: int = 1,
) -> list[Tracklet]:
    """One tracklet per seed, returned in seed id order."""
    if seeds is None:
        seeds = extract_seeds(seq)
    seeds = sorted(seeds, key=lambda s: s.tracklet_id)

    def run(seed):
        return propagate_seed(engine, seq, seed, stride_frac, scales)

    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, seeds))
    return [run(s) for s in seeds]
