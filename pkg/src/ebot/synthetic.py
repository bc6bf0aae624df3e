"""Synthetic low-frame-rate sequences with ground truth and an oracle matcher.

Persons jump abruptly between frames, the simulated detector drops faces
and adds spurious boxes, and occlusion intervals hide faces entirely. The
:class:`OracleEngine` scores windows by overlap with the true face of the
seed's identity, so the whole pipeline can run without pixels.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .evaluation import GroundTruth, GTFace
from .formats import write_detections, write_ground_truth
from .geometry import BoundingBox, intersection_area, iou, iou_many
from .matching import ScoreMatrixEngine, SimilarityEngine, save_image
from .sequence import FrameDetections, Seed, Sequence, extract_seeds
from .tracklets import DEFAULT_SCALES, DEFAULT_STRIDE_FRAC, generate_candidates

MAX_PLACEMENT_ATTEMPTS = 100
IDENTITY_IOU = 0.3

PERSON_COLORS = [
    (200, 40, 40),
    (40, 90, 210),
    (40, 170, 60),
    (220, 190, 30),
]


@dataclass(frozen=True)
class GenConfig:
    num_frames: int = 25
    num_persons: int = 2
    frame_size: tuple[int, int] = (320, 240)
    face_width: tuple[float, float] = (28.0, 44.0)
    jump_scale: float = 0.25
    size_drift: float = 0.1
    detector_miss_rate: float = 0.2
    false_positive_rate: float = 0.05
    occlusion_intervals: tuple[tuple[int, int, int], ...] = ()  # (person, start, end), end exclusive
    rng_seed: int = 0
    score_noise: float = 0.05
    seq_id: str = ""

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if not 1 <= self.num_persons <= len(PERSON_COLORS):
            raise ValueError(f"num_persons must be in 1..{len(PERSON_COLORS)}")
        for name in ("jump_scale", "detector_miss_rate", "false_positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.score_noise < 0:
            raise ValueError("score_noise must be non-negative")

    @property
    def name(self) -> str:
        return self.seq_id or f"synth-{self.rng_seed:04d}"


class OracleEngine(SimilarityEngine):
    """Scores a window by its IoU with the true face of the seed's identity.

    A seed whose box overlaps no visible face by at least ``IDENTITY_IOU``
    is treated as static background and scored against its own box. Gaussian
    jitter is drawn from a stream keyed by (rng seed, tracklet, frame), so
    scores do not depend on query order. An occluded identity scores zero
    everywhere.
    """

    kind = "oracle"

    def __init__(self, gt: GroundTruth, score_noise: float = 0.05, rng_seed: int = 0):
        self.gt = gt
        self.score_noise = score_noise
        self.rng_seed = rng_seed

    def identity_of(self, seed: Seed) -> Optional[str]:
        best, best_iou = None, 0.0
        for ident, box in sorted(self.gt.visible(seed.seed_frame).items()):
            v = iou(seed.box, box)
            if v > best_iou:
                best, best_iou = ident, v
        return best if best_iou >= IDENTITY_IOU else None

    def target_box(self, seed: Seed, frame_index: int) -> Optional[BoundingBox]:
        ident = self.identity_of(seed)
        if ident is None:
            return seed.box
        return self.gt.visible(frame_index).get(ident)

    def score(self, seed: Seed, frame_index: int, windows: np.ndarray) -> np.ndarray:
        target = self.target_box(seed, frame_index)
        if target is None:
            return np.zeros(windows.shape[0])
        base = iou_many(target, windows)
        if self.score_noise > 0:
            rng = np.random.default_rng([self.rng_seed, seed.tracklet_id, seed.seed_frame, frame_index])
            base = base + rng.normal(0.0, self.score_noise, windows.shape[0])
        return np.clip(base, 0.0, 1.0)


@dataclass
class SyntheticSequence:
    config: GenConfig
    sequence: Sequence
    ground_truth: GroundTruth
    engine: OracleEngine
    frames: Optional[list[np.ndarray]] = None
    person_boxes: list[list[BoundingBox]] = field(default_factory=list)  # [frame][person]


def _round_box(x, y, w, h) -> BoundingBox:
    return BoundingBox(round(float(x), 2), round(float(y), 2), round(float(w), 2), round(float(h), 2))


def _clip_inside(cx, cy, w, h, width, height):
    x = min(max(cx - w / 2, 0.0), width - w)
    y = min(max(cy - h / 2, 0.0), height - h)
    return x, y


def _disjoint(boxes) -> bool:
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if intersection_area(boxes[i], boxes[j]) > 0:
                return False
    return True


def _place_persons(cfg: GenConfig, rng: np.random.Generator) -> list[list[BoundingBox]]:
    width, height = cfg.frame_size
    base_w = rng.uniform(cfg.face_width[0], cfg.face_width[1], cfg.num_persons)
    scale = np.ones(cfg.num_persons)
    centers = None
    out = []
    for k in range(cfg.num_frames):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            new_scale = np.clip(scale * (1 + rng.uniform(-cfg.size_drift, cfg.size_drift, cfg.num_persons)), 0.7, 1.4)
            ws = base_w * new_scale
            hs = ws * 1.2
            if centers is None:
                cxs = rng.uniform(0, width, cfg.num_persons)
                cys = rng.uniform(0, height, cfg.num_persons)
            else:
                cxs = centers[0] + rng.uniform(-1, 1, cfg.num_persons) * cfg.jump_scale * width
                cys = centers[1] + rng.uniform(-1, 1, cfg.num_persons) * cfg.jump_scale * height
            boxes = []
            for p in range(cfg.num_persons):
                x, y = _clip_inside(cxs[p], cys[p], ws[p], hs[p], width, height)
                boxes.append(_round_box(x, y, ws[p], hs[p]))
            if _disjoint(boxes):
                break
        else:
            raise RuntimeError(
                f"could not place {cfg.num_persons} non-overlapping persons in frame {k} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        scale = new_scale
        centers = (np.array([b.x + b.w / 2 for b in boxes]), np.array([b.y + b.h / 2 for b in boxes]))
        out.append(boxes)
    return out


def _occluded_set(cfg: GenConfig) -> set[tuple[int, int]]:
    occ = set()
    for person, start, end in cfg.occlusion_intervals:
        for k in range(max(start, 0), min(end, cfg.num_frames)):
            occ.add((person, k))
    return occ


def _jitter(box: BoundingBox, rng: np.random.Generator) -> BoundingBox:
    dx, dy, dw, dh = rng.uniform(-0.05, 0.05, 4)
    return _round_box(box.x + dx * box.w, box.y + dy * box.h, box.w * (1 + dw), box.h * (1 + dh))


def _false_box(cfg: GenConfig, rng: np.random.Generator) -> BoundingBox:
    width, height = cfg.frame_size
    w = rng.uniform(cfg.face_width[0], cfg.face_width[1])
    h = w * 1.2
    return _round_box(rng.uniform(0, width - w), rng.uniform(0, height - h), w, h)


def generate_sequence(cfg: GenConfig, render: bool = False) -> SyntheticSequence:
    rng = np.random.default_rng(cfg.rng_seed)
    persons = _place_persons(cfg, rng)
    occluded = _occluded_set(cfg)

    gt_frames = []
    det_frames = []
    for k, boxes in enumerate(persons):
        gt_frames.append([GTFace(f"p{p}", b, (p, k) in occluded) for p, b in enumerate(boxes)])
        dets = []
        for p, b in enumerate(boxes):
            if (p, k) in occluded:
                continue
            if rng.random() >= cfg.detector_miss_rate:
                dets.append(_jitter(b, rng))
        for _ in range(rng.poisson(cfg.false_positive_rate)):
            dets.append(_false_box(cfg, rng))
        order = rng.permutation(len(dets))
        det_frames.append(FrameDetections(k, tuple(dets[i] for i in order)))

    gt = GroundTruth(gt_frames)
    seq = Sequence(id=cfg.name, frames=tuple(det_frames), frame_size=tuple(cfg.frame_size))
    frames = render_frames(cfg, persons, occluded) if render else None
    engine = OracleEngine(gt, cfg.score_noise, cfg.rng_seed)
    return SyntheticSequence(cfg, seq, gt, engine, frames, persons)


def _background(cfg: GenConfig, k: int) -> np.ndarray:
    width, height = cfg.frame_size
    rng = np.random.default_rng([cfg.rng_seed, 1, k])
    coarse = rng.uniform(60, 140, ((height + 15) // 16, (width + 15) // 16, 3))
    img = np.kron(coarse, np.ones((16, 16, 1)))[:height, :width]
    img += rng.normal(0, 6, img.shape)
    return img


def _draw_person(img: np.ndarray, box: BoundingBox, color, border: int = 4) -> None:
    h, w = img.shape[:2]
    x0, y0 = int(box.x), int(box.y)
    x1, y1 = min(int(box.x + box.w), w), min(int(box.y + box.h), h)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    # distance to the nearest edge, in pixels
    dist = np.minimum.reduce([xs - x0, x1 - 1 - xs, ys - y0, y1 - 1 - ys])
    shade = np.clip(0.35 + 0.65 * dist / border, 0.35, 1.0)[..., None]
    img[y0:y1, x0:x1] = np.asarray(color, dtype=float) * shade


def render_frames(cfg: GenConfig, persons, occluded) -> list[np.ndarray]:
    """Flat-colour rectangles with a dark-to-light border on textured ground.

    Occluded faces are covered by a grey block.
    """
    frames = []
    for k, boxes in enumerate(persons):
        img = _background(cfg, k)
        for p, box in enumerate(boxes):
            _draw_person(img, box, PERSON_COLORS[p])
            if (p, k) in occluded:
                _draw_person(img, box, (128, 128, 128), border=1)
        frames.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    return frames


def random_occlusions(rng: np.random.Generator, num_persons: int, num_frames: int, fraction: float = 0.1):
    """One interval per person covering about ``fraction`` of the frames."""
    span = max(1, int(round(fraction * num_frames)))
    out = []
    for p in range(num_persons):
        start = int(rng.integers(0, max(num_frames - span, 0) + 1))
        out.append((p, start, start + span))
    return tuple(out)


def corpus_configs(
    count: int,
    base_seed: int = 0,
    persons=(2, 3),
    occlusion_fraction: float = 0.1,
    **overrides,
) -> list[GenConfig]:
    """Configs for a corpus of ``count`` sequences with injected occlusions.

    Sequence ``n`` gets ``rng_seed = base_seed + n``; person counts and
    occlusion intervals come from a separate stream keyed on ``base_seed``.
    """
    rng = np.random.default_rng([base_seed, 1])
    cfgs = []
    for n in range(count):
        num_persons = int(rng.integers(persons[0], persons[1] + 1))
        num_frames = overrides.get("num_frames", GenConfig.num_frames)
        occ = random_occlusions(rng, num_persons, num_frames, occlusion_fraction) if occlusion_fraction > 0 else ()
        cfgs.append(
            GenConfig(
                num_persons=num_persons,
                occlusion_intervals=occ,
                rng_seed=base_seed + n,
                seq_id=f"synth-{base_seed}-{n:03d}",
                **overrides,
            )
        )
    return cfgs


def export_score_matrix(
    engine: SimilarityEngine,
    seq: Sequence,
    top_k: int = 16,
    stride_frac: float = DEFAULT_STRIDE_FRAC,
    scales=DEFAULT_SCALES,
) -> ScoreMatrixEngine:
    """Record each (seed, frame)'s ``top_k`` window scores.

    Unrecorded windows replay as zero, which preserves every argmax: the
    first best-scoring window is always kept.
    """
    matrix = ScoreMatrixEngine()
    for seed in extract_seeds(seq):
        for k in range(seq.length):
            if k == seed.seed_frame:
                continue
            cands = generate_candidates(seq, seed, k, stride_frac, scales)
            scores = engine.score(seed, k, cands.windows)
            order = np.argsort(-scores, kind="stable")[:top_k]
            for i in order:
                if scores[i] > 0:
                    matrix.add(seed.tracklet_id, k, cands.windows[i], float(scores[i]))
    return matrix


def write_corpus(
    out_dir,
    cfgs,
    render: bool = False,
    export_matrix: bool = True,
    top_k: int = 16,
) -> Path:
    """Write detections, ground truth, optional frames and score matrix; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for cfg in cfgs:
        syn = generate_sequence(cfg, render=render)
        seq_dir = out_dir / cfg.name
        seq_dir.mkdir(parents=True, exist_ok=True)
        write_detections(seq_dir / "detections.jsonl", syn.sequence.frames)
        write_ground_truth(seq_dir / "gt.jsonl", syn.ground_truth)
        entry = {
            "id": cfg.name,
            "length": cfg.num_frames,
            "frame_size": list(cfg.frame_size),
            "detections": f"{cfg.name}/detections.jsonl",
            "ground_truth": f"{cfg.name}/gt.jsonl",
            "oracle": {"rng_seed": cfg.rng_seed, "score_noise": cfg.score_noise},
        }
        if syn.frames is not None:
            (seq_dir / "frames").mkdir(exist_ok=True)
            names = []
            for k, img in enumerate(syn.frames):
                name = f"{cfg.name}/frames/{k:03d}.ppm"
                save_image(out_dir / name, img)
                names.append(name)
            entry["images"] = names
        if export_matrix:
            export_score_matrix(syn.engine, syn.sequence, top_k).save(seq_dir / "scores.jsonl")
            entry["score_matrix"] = f"{cfg.name}/scores.jsonl"
        entry["generator"] = _config_record(cfg)
        entries.append(entry)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"sequences": entries}, indent=1) + "\n")
    return manifest


def _config_record(cfg: GenConfig) -> dict:
    d = asdict(cfg)
    d["frame_size"] = list(cfg.frame_size)
    d["occlusion_intervals"] = [list(t) for t in cfg.occlusion_intervals]
    return d
