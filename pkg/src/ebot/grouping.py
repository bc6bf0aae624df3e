"""Grouping tracklets into extended bags-of-tracklets (eBoTs)."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import iou
from .tracklets import Tracklet

DEFAULT_SIM_THRESHOLD = 0.2
DEFAULT_DENSITY_THRESHOLD = 0.2


@dataclass
class EBoT:
    id: int
    tracklets: list[Tracklet]
    density: float = 0.0
    reliable: bool = False

    @property
    def tracklet_ids(self) -> list[int]:
        return [t.id for t in self.tracklets]


def tracklet_similarity(a: Tracklet, b: Tracklet) -> float:
    """Mean per-frame IoU of two frame-aligned tracklets."""
    if len(a) != len(b):
        raise ValueError(f"tracklet spans differ: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty tracklets")
    return sum(iou(p, q) for p, q in zip(a.boxes, b.boxes)) / len(a)


def ebot_similarity(t: Tracklet, bag: EBoT) -> float:
    if not bag.tracklets:
        raise ValueError("empty eBoT")
    return sum(tracklet_similarity(t, m) for m in bag.tracklets) / len(bag.tracklets)


def _opening_order(t: Tracklet):
    b = t.seed.box
    return (t.seed.seed_frame, b.x, b.y, b.w, b.h, t.id)


def group_tracklets(tracklets, sim_threshold: float = DEFAULT_SIM_THRESHOLD) -> list[EBoT]:
    """Greedy single-pass partition of tracklets into bags.

    The first tracklet (by seed frame, then seed box) opens a bag; the rest
    are visited in decreasing similarity to it and each joins the first bag
    whose mean similarity reaches ``sim_threshold``, or opens a new one.
    """
    if not tracklets:
        return []
    ordered = sorted(tracklets, key=_opening_order)
    first = ordered[0]
    rest = ordered[1:]
    # stable sort keeps opening order among equal similarities
    rest.sort(key=lambda t: -tracklet_similarity(t, first))
    bags = [EBoT(id=0, tracklets=[first])]
    for t in rest:
        for bag in bags:
            if ebot_similarity(t, bag) >= sim_threshold:
                bag.tracklets.append(t)
                break
        else:
            bags.append(EBoT(id=len(bags), tracklets=[t]))
    return bags


def filter_reliable(bags, seq_len: int, density_threshold: float = DEFAULT_DENSITY_THRESHOLD) -> list[EBoT]:
    """Set density and reliability on every bag; return the reliable ones."""
    if seq_len <= 0:
        raise ValueError("sequence length must be positive")
    kept = []
    for bag in bags:
        bag.density = len(bag.tracklets) / seq_len
        bag.reliable = bag.density >= density_threshold
        if bag.reliable:
            kept.append(bag)
    return kept


def min_reliable_size(seq_len: int, density_threshold: float = DEFAULT_DENSITY_THRESHOLD) -> int:
    return math.ceil(density_threshold * seq_len - 1e-12)
