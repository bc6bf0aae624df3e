"""Reading and writing the on-disk artifacts.

All frame indices are 0-based. Boxes are ``[x, y, w, h]`` lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .evaluation import GroundTruth, GTFace, MotReport
from .geometry import BoundingBox
from .grouping import EBoT
from .sequence import FrameDetections, Seed, Sequence
from .tracklets import Tracklet


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def _read_jsonl(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{n}: malformed JSON ({exc.msg})") from exc
    return records


def _write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _box(values, where) -> BoundingBox:
    try:
        return BoundingBox.from_list(values)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: bad box {values!r} ({exc})") from exc


# --------------------------------------------------------------------------
# detections and manifests


def read_detections(path, length: int) -> list[FrameDetections]:
    per_frame: dict[int, list[BoundingBox]] = {k: [] for k in range(length)}
    seen = set()
    for rec in _read_jsonl(path):
        try:
            k = int(rec["frame"])
            raw = rec["boxes"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: detection record needs 'frame' and 'boxes'") from exc
        if not 0 <= k < length:
            raise FormatError(f"{path}: frame {k} outside 0..{length - 1}")
        if k in seen:
            raise FormatError(f"{path}: frame {k} listed twice")
        seen.add(k)
        per_frame[k] = [_box(b, f"{path} frame {k}") for b in raw]
    return [FrameDetections(k, tuple(per_frame[k])) for k in range(length)]


def write_detections(path, frames) -> None:
    _write_jsonl(path, ({"frame": f.frame_index, "boxes": [b.as_list() for b in f.boxes]} for f in frames))


@dataclass
class ManifestEntry:
    """One sequence listed in a manifest, with resolved paths."""

    sequence: Sequence
    ground_truth: Optional[Path] = None
    score_matrix: Optional[Path] = None
    oracle: dict = field(default_factory=dict)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _frame_size(rec, frames, images, path) -> tuple[int, int]:
    if "frame_size" in rec:
        w, h = rec["frame_size"]
        return int(w), int(h)
    if images:
        from PIL import Image

        with Image.open(images[0]) as img:
            return img.size
    boxes = [b for f in frames for b in f.boxes]
    if not boxes:
        raise FormatError(f"{path}: cannot infer frame_size without images or detections")
    return int(max(b.x2 for b in boxes)) + 1, int(max(b.y2 for b in boxes)) + 1


def _entry(rec: dict, base: Path, path) -> ManifestEntry:
    try:
        seq_id = str(rec["id"])
        length = int(rec["length"])
        det_path = _resolve(base, rec["detections"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: sequence entry needs 'id', 'length' and 'detections'") from exc
    if length < 1:
        raise FormatError(f"{path}: sequence {seq_id} has length {length}")
    if not det_path.exists():
        raise FormatError(f"{path}: missing detections file {det_path}")
    frames = read_detections(det_path, length)
    images = None
    if rec.get("images"):
        images = tuple(str(_resolve(base, p)) for p in rec["images"])
        if len(images) != length:
            raise FormatError(f"{path}: sequence {seq_id} lists {len(images)} images for {length} frames")
    seq = Sequence(
        id=seq_id,
        frames=tuple(frames),
        frame_size=_frame_size(rec, frames, images, path),
        image_paths=images,
    )
    gt = _resolve(base, rec["ground_truth"]) if rec.get("ground_truth") else None
    if gt is not None and not gt.exists():
        raise FormatError(f"{path}: missing ground truth file {gt}")
    matrix = _resolve(base, rec["score_matrix"]) if rec.get("score_matrix") else None
    return ManifestEntry(seq, gt, matrix, dict(rec.get("oracle", {})))


def read_manifest(path) -> list[ManifestEntry]:
    """Load a single-sequence manifest object, a list of them, or ``{"sequences": [...]}``."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing manifest {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON ({exc.msg})") from exc
    if isinstance(data, dict) and "sequences" in data:
        data = data["sequences"]
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise FormatError(f"{path}: manifest must be an object or a list")
    base = path.parent
    return [_entry(rec, base, path) for rec in data]


# --------------------------------------------------------------------------
# ground truth


def read_ground_truth(path, length: Optional[int] = None) -> GroundTruth:
    per_frame: dict[int, list[GTFace]] = {}
    for rec in _read_jsonl(path):
        try:
            k = int(rec["frame"])
            faces = [
                GTFace(str(f["id"]), _box(f["box"], f"{path} frame {k}"), bool(f.get("occluded", False)))
                for f in rec["faces"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: ground-truth record malformed ({exc})") from exc
        per_frame[k] = faces
    n = length if length is not None else (max(per_frame) + 1 if per_frame else 0)
    try:
        return GroundTruth([per_frame.get(k, []) for k in range(n)])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_ground_truth(path, gt: GroundTruth) -> None:
    _write_jsonl(
        path,
        (
            {
                "frame": k,
                "faces": [{"id": f.identity, "box": f.box.as_list(), "occluded": f.occluded} for f in faces],
            }
            for k, faces in enumerate(gt.frames)
        ),
    )


# --------------------------------------------------------------------------
# stage dumps


def write_tracklets(path, tracklets) -> None:
    def records():
        for t in tracklets:
            for k, (box, score) in enumerate(zip(t.boxes, t.scores)):
                rec = {"tracklet": t.id, "frame": k, "box": box.as_list(), "score": score}
                if k == t.seed.seed_frame:
                    rec["seed"] = True
                yield rec

    _write_jsonl(path, records())


def read_tracklets(path) -> list[Tracklet]:
    rows: dict[int, list[dict]] = {}
    for rec in _read_jsonl(path):
        rows.setdefault(int(rec["tracklet"]), []).append(rec)
    out = []
    for tid in sorted(rows):
        recs = sorted(rows[tid], key=lambda r: r["frame"])
        if [r["frame"] for r in recs] != list(range(len(recs))):
            raise FormatError(f"{path}: tracklet {tid} frames are not 0..{len(recs) - 1}")
        seeds = [r for r in recs if r.get("seed")]
        if len(seeds) != 1:
            raise FormatError(f"{path}: tracklet {tid} must mark exactly one seed frame")
        boxes = tuple(_box(r["box"], f"{path} tracklet {tid}") for r in recs)
        seed = Seed(tid, int(seeds[0]["frame"]), boxes[int(seeds[0]["frame"])])
        out.append(Tracklet(tid, seed, boxes, tuple(float(r["score"]) for r in recs)))
    return out


def write_ebots(path, bags) -> None:
    records = [
        {"ebot": b.id, "density": b.density, "reliable": b.reliable, "tracklets": b.tracklet_ids}
        for b in bags
    ]
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


def read_ebots(path, tracklets) -> list[EBoT]:
    by_id = {t.id: t for t in tracklets}
    try:
        records = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON ({exc.msg})") from exc
    bags = []
    for rec in records:
        missing = [i for i in rec["tracklets"] if i not in by_id]
        if missing:
            raise FormatError(f"{path}: eBoT {rec['ebot']} references unknown tracklets {missing}")
        bags.append(
            EBoT(
                id=int(rec["ebot"]),
                tracklets=[by_id[i] for i in rec["tracklets"]],
                density=float(rec["density"]),
                reliable=bool(rec["reliable"]),
            )
        )
    return bags


def write_prototypes(path, prototypes, exclude_occlusions: bool = True) -> None:
    def records():
        for p in prototypes:
            for k, box in enumerate(p.emitted_boxes(exclude_occlusions)):
                yield {
                    "ebot": p.ebot_id,
                    "frame": k,
                    "box": box.as_list() if box is not None else None,
                    "confidence": p.frame_confidence[k],
                    "occluded": p.occluded[k],
                }
            yield {
                "ebot": p.ebot_id,
                "prototype_confidence": p.confidence,
                "occluded_frames": p.occluded_count,
                "dominates_members": p.dominates_members,
            }

    _write_jsonl(path, records())


def read_prototype_tracks(path) -> tuple[dict[int, list], dict[int, dict]]:
    """Per-ebot emitted boxes (``None`` where no box was written) and summary records."""
    frames: dict[int, dict[int, Optional[BoundingBox]]] = {}
    summaries = {}
    for rec in _read_jsonl(path):
        eid = int(rec["ebot"])
        if "frame" in rec:
            box = _box(rec["box"], f"{path} ebot {eid}") if rec["box"] is not None else None
            frames.setdefault(eid, {})[int(rec["frame"])] = box
        else:
            summaries[eid] = rec
    tracks = {}
    for eid, by_frame in frames.items():
        n = max(by_frame) + 1
        tracks[eid] = [by_frame.get(k) for k in range(n)]
    return tracks, summaries


def write_report(path, report: MotReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())

