"""Prototype extraction, occlusion estimation and confidence scoring."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import BoundingBox, intersection_area
from .grouping import EBoT

DEFAULT_OCCLUSION_THRESHOLD = 0.12
DEFAULT_BETA = 1.0
NORMALIZATION_MODES = ("max-scale", "min-max", "none")


@dataclass(frozen=True)
class ConfidenceConfig:
    L: float = DEFAULT_OCCLUSION_THRESHOLD
    beta: float = DEFAULT_BETA
    normalization: str = "max-scale"

    def __post_init__(self):
        if not 0.0 <= self.L <= 1.0:
            raise ValueError(f"occlusion threshold L must lie in [0, 1], got {self.L}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.normalization not in NORMALIZATION_MODES:
            raise ValueError(f"unknown normalization {self.normalization!r}")


@dataclass
class Prototype:
    ebot_id: int
    boxes: list[BoundingBox]
    frame_confidence: list[float]
    occluded: list[bool]
    confidence: float
    raw_confidence: list[float] = field(default_factory=list)
    tracklet_confidences: dict[int, float] = field(default_factory=dict)

    @property
    def occluded_count(self) -> int:
        return sum(self.occluded)

    @property
    def dominates_members(self) -> bool:
        """Whether the prototype is more confident than its best member tracklet."""
        if not self.tracklet_confidences:
            return True
        return self.confidence > max(self.tracklet_confidences.values())

    def emitted_boxes(self, exclude_occlusions: bool = True) -> list[Optional[BoundingBox]]:
        if not exclude_occlusions:
            return list(self.boxes)
        return [None if occ else box for box, occ in zip(self.boxes, self.occluded)]


def _chosen_members(bag: EBoT) -> list[int]:
    members = bag.tracklets
    if not members:
        raise ValueError("empty eBoT")
    n_frames = len(members[0])
    chosen = []
    for k in range(n_frames):
        best = None
        best_key = None
        for i, t in enumerate(members):
            overlap = sum(
                intersection_area(t.boxes[k], u.boxes[k]) for j, u in enumerate(members) if j != i
            )
            key = (overlap, t.scores[k], -t.id)
            if best_key is None or key > best_key:
                best, best_key = i, key
        chosen.append(best)
    return chosen


def extract_prototype(bag: EBoT) -> list[BoundingBox]:
    """Per frame, the member box with the largest summed overlap with the others.

    Ties go to the member with the higher own match score, then the lower id.
    """
    chosen = _chosen_members(bag)
    return [bag.tracklets[i].boxes[k] for k, i in enumerate(chosen)]


def normalize_scores(bag: EBoT, mode: str = "max-scale") -> np.ndarray:
    """Match scores of the bag as a ``(members, frames)`` array scaled into [0, 1].

    When every score in the bag is equal the result is all ones.
    """
    if not bag.tracklets:
        raise ValueError("empty eBoT")
    if mode not in NORMALIZATION_MODES:
        raise ValueError(f"unknown normalization {mode!r}")
    scores = np.array([t.scores for t in bag.tracklets], dtype=float)
    if mode == "none":
        return scores
    hi = scores.max()
    lo = scores.min()
    if hi == lo:
        return np.ones_like(scores)
    if mode == "max-scale":
        return scores / hi
    return (scores - lo) / (hi - lo)


def frame_confidence(bag: EBoT, k: int, normalized: np.ndarray) -> float:
    if not 0 <= k < normalized.shape[1]:
        raise IndexError(f"frame {k} outside tracklet span")
    return float(normalized[:, k].mean())


def estimate_occlusions(confidences, L: float = DEFAULT_OCCLUSION_THRESHOLD) -> tuple[list[float], list[bool]]:
    """Zero out frames whose confidence falls below ``L`` and flag them occluded."""
    if not 0.0 <= L <= 1.0:
        raise ValueError(f"L must lie in [0, 1], got {L}")
    refined = []
    flags = []
    for c in confidences:
        occluded = c < L
        refined.append(0.0 if occluded else float(c))
        flags.append(occluded)
    return refined, flags


def occlusion_weight(length: int, z: int, beta: float = DEFAULT_BETA) -> float:
    if z >= length:
        return 0.0
    return max(1.0 + beta * math.log((length - z) / length), 0.0)


def prototype_confidence(refined, z: int, beta: float = DEFAULT_BETA) -> float:
    """Mean refined confidence damped by ``max(1 + beta * ln((n - z) / n), 0)``."""
    n = len(refined)
    if n == 0:
        raise ValueError("empty confidence list")
    if not 0 <= z <= n:
        raise ValueError(f"occluded count {z} outside [0, {n}]")
    return sum(refined) / n * occlusion_weight(n, z, beta)


def tracklet_confidence(normalized_row, config: ConfidenceConfig = ConfidenceConfig()) -> float:
    """Prototype confidence formula applied to one tracklet's own scores."""
    refined, flags = estimate_occlusions(normalized_row, config.L)
    return prototype_confidence(refined, sum(flags), config.beta)


def build_prototype(bag: EBoT, config: ConfidenceConfig = ConfidenceConfig()) -> Prototype:
    boxes = extract_prototype(bag)
    normalized = normalize_scores(bag, config.normalization)
    raw = [frame_confidence(bag, k, normalized) for k in range(normalized.shape[1])]
    refined, flags = estimate_occlusions(raw, config.L)
    conf = prototype_confidence(refined, sum(flags), config.beta)
    member_conf = {
        t.id: tracklet_confidence(normalized[i], config) for i, t in enumerate(bag.tracklets)
    }
    return Prototype(
        ebot_id=bag.id,
        boxes=boxes,
        frame_confidence=refined,
        occluded=flags,
        confidence=conf,
        raw_confidence=raw,
        tracklet_confidences=member_conf,
    )


def calibrate_threshold(training) -> float:
    """Median over sequences of the median occluded-frame confidence."""
    medians = [statistics.median(seq) for seq in training if len(seq) > 0]
    if not medians:
        raise ValueError("calibration needs at least one non-empty confidence list")
    return float(statistics.median(medians))
