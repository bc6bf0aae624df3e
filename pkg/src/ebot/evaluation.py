"""CLEAR MOT scoring of prototype tracks against ground truth.

Tracks are first tied to ground-truth identities once, globally. Each frame
is then scored independently: track boxes and visible faces are paired
one-to-one at IoU >= the match threshold, preferring pairs that respect the
global assignment, then more pairs, then higher total IoU. Pairs with the
wrong identity are identity switches; unpaired track boxes are false
positives; unpaired faces are false negatives.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, intersection_area, iou

DEFAULT_IOU_MATCH = 0.2

Tracks = Mapping[int, list]  # track id -> per-frame box or None


@dataclass(frozen=True)
class GTFace:
    identity: str
    box: BoundingBox
    occluded: bool = False


@dataclass
class GroundTruth:
    frames: list[list[GTFace]]

    def __post_init__(self):
        for k, faces in enumerate(self.frames):
            ids = [f.identity for f in faces]
            if len(ids) != len(set(ids)):
                raise ValueError(f"frame {k}: identity listed twice")

    @property
    def length(self) -> int:
        return len(self.frames)

    def visible(self, k: int) -> dict[str, BoundingBox]:
        if k >= len(self.frames):
            return {}
        return {f.identity: f.box for f in self.frames[k] if not f.occluded}

    def gt_count(self, k: int) -> int:
        return len(self.visible(k))

    def identities(self) -> list[str]:
        return sorted({f.identity for faces in self.frames for f in faces})


@dataclass
class MotReport:
    motp: float
    mota: float
    fp: int
    fn: int
    ids: int
    gt_total: int
    per_frame: list[tuple[int, int, int]] = field(default_factory=list)
    matched_frames: dict[int, list[int]] = field(default_factory=dict)
    assignment: dict[int, Optional[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_frame"] = [list(t) for t in self.per_frame]
        d["matched_frames"] = {str(k): v for k, v in self.matched_frames.items()}
        d["assignment"] = {str(k): v for k, v in self.assignment.items()}
        return d


def tracks_from_prototypes(prototypes, exclude_occlusions: bool = True) -> dict[int, list]:
    return {p.ebot_id: p.emitted_boxes(exclude_occlusions) for p in prototypes}


def _as_tracks(tracks_or_prototypes, exclude_occlusions: bool = True) -> dict[int, list]:
    if isinstance(tracks_or_prototypes, Mapping):
        return dict(tracks_or_prototypes)
    return tracks_from_prototypes(tracks_or_prototypes, exclude_occlusions)


def _n_frames(tracks: Mapping, gt: GroundTruth) -> int:
    return max([gt.length] + [len(b) for b in tracks.values()])


def match_tracks_to_gt(tracks, gt: GroundTruth, exclude_occlusions: bool = True) -> dict[int, Optional[str]]:
    """Greedy one-to-one track/identity assignment on summed per-frame IoU.

    Pairs with zero total overlap are never made; ties go to the earlier
    track id and then the lexicographically smaller identity.
    """
    tracks = _as_tracks(tracks, exclude_occlusions)
    ids = gt.identities()
    tids = sorted(tracks)
    totals = []
    for t in tids:
        boxes = tracks[t]
        for ident in ids:
            s = 0.0
            for k, box in enumerate(boxes):
                g = gt.visible(k).get(ident)
                if box is not None and g is not None:
                    s += iou(box, g)
            if s > 0:
                totals.append((-s, t, ident))
    totals.sort()
    assignment: dict[int, Optional[str]] = {t: None for t in tids}
    used = set()
    for _, t, ident in totals:
        if assignment[t] is None and ident not in used:
            assignment[t] = ident
            used.add(ident)
    return assignment


def matched_set(tracks, gt: GroundTruth, assignment) -> dict[int, list[int]]:
    """Frames where each track box intersects its assigned identity's visible box."""
    tracks = _as_tracks(tracks)
    out = {}
    for t, boxes in tracks.items():
        ident = assignment.get(t)
        frames = []
        if ident is not None:
            for k, box in enumerate(boxes):
                g = gt.visible(k).get(ident)
                if box is not None and g is not None and intersection_area(box, g) > 0:
                    frames.append(k)
        out[t] = frames
    return out


def motp(tracks, gt: GroundTruth, assignment) -> float:
    """Mean IoU over matched (track, frame) pairs; zero when there are none."""
    tracks = _as_tracks(tracks)
    ms = matched_set(tracks, gt, assignment)
    values = [
        iou(tracks[t][k], gt.visible(k)[assignment[t]]) for t, frames in ms.items() for k in frames
    ]
    if not values:
        return 0.0
    return sum(values) / len(values)


def frame_matching(track_boxes, faces, assignment, threshold: float):
    """One-to-one pairing of ``(track id, box)`` pairs with ``(identity, box)`` faces.

    Returns the list of matched index pairs.
    """
    nt, ng = len(track_boxes), len(faces)
    if nt == 0 or ng == 0:
        return []
    ious = np.array([[iou(tb, fb) for _, fb in faces] for _, tb in track_boxes])
    allowed = ious >= threshold
    correct = np.array(
        [[assignment.get(tid) == ident for ident, _ in faces] for tid, _ in track_boxes]
    )
    # lexicographic objective folded into one weight: correct pairs, then pair count, then IoU
    n = min(nt, ng)
    c_pair = n + 1.0
    c_correct = (n + 1.0) * c_pair
    weight = np.where(allowed, correct * c_correct + c_pair + ious, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]


def mota(tracks, gt: GroundTruth, assignment, iou_match_threshold: float = DEFAULT_IOU_MATCH) -> MotReport:
    tracks = _as_tracks(tracks)
    n_frames = _n_frames(tracks, gt)
    per_frame = []
    gt_total = 0
    for k in range(n_frames):
        visible = gt.visible(k)
        faces = sorted(visible.items())
        emitted = [
            (t, boxes[k]) for t, boxes in sorted(tracks.items()) if k < len(boxes) and boxes[k] is not None
        ]
        pairs = frame_matching(emitted, faces, assignment, iou_match_threshold)
        ids_k = sum(1 for r, c in pairs if assignment.get(emitted[r][0]) != faces[c][0])
        fp_k = len(emitted) - len(pairs)
        fn_k = len(faces) - len(pairs)
        per_frame.append((fp_k, fn_k, ids_k))
        gt_total += len(faces)
    if gt_total == 0:
        raise ValueError("no ground truth")
    fp = sum(f[0] for f in per_frame)
    fn = sum(f[1] for f in per_frame)
    ids = sum(f[2] for f in per_frame)
    return MotReport(
        motp=motp(tracks, gt, assignment),
        mota=1.0 - (fp + fn + ids) / gt_total,
        fp=fp,
        fn=fn,
        ids=ids,
        gt_total=gt_total,
        per_frame=per_frame,
        matched_frames=matched_set(tracks, gt, assignment),
        assignment=dict(assignment),
    )


def evaluate(
    prototypes,
    gt: GroundTruth,
    iou_match_threshold: float = DEFAULT_IOU_MATCH,
    exclude_occlusions: bool = True,
) -> MotReport:
    tracks = _as_tracks(prototypes, exclude_occlusions)
    assignment = match_tracks_to_gt(tracks, gt)
    return mota(tracks, gt, assignment, iou_match_threshold)


def format_table(rows) -> str:
    """Plain-text table of ``(name, MotReport)`` rows.

    FP, FN and IDS are shown as a percentage of ground-truth faces, with raw
    counts alongside.
    """
    header = f"{'sequence':<24}{'MOTP':>9}{'MOTA':>9}{'FP':>16}{'FN':>16}{'IDS':>16}"
    lines = [header, "-" * len(header)]
    for name, r in rows:
        def pct(v):
            return f"{100.0 * v / r.gt_total:6.2f}% ({v:d})" if r.gt_total else f"   -   ({v:d})"
        lines.append(
            f"{name:<24}{100 * r.motp:8.2f}%{100 * r.mota:8.2f}%{pct(r.fp):>16}{pct(r.fn):>16}{pct(r.ids):>16}"
        )
    return "\n".join(lines) + "\n"
