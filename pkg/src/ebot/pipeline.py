"""Orchestration: gate, seeds, tracklets, eBoTs, prototypes, evaluation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import formats
from .evaluation import DEFAULT_IOU_MATCH, MotReport, evaluate, format_table
from .grouping import DEFAULT_DENSITY_THRESHOLD, DEFAULT_SIM_THRESHOLD, EBoT, filter_reliable, group_tracklets
from .matching import DEFAULT_BINS, DEFAULT_GRID, DEFAULT_HSV_THRESHOLD, ScoreMatrixEngine, SimilarityEngine, WarpEngine
from .prototype import (
    DEFAULT_BETA,
    DEFAULT_OCCLUSION_THRESHOLD,
    ConfidenceConfig,
    Prototype,
    build_prototype,
)
from .sequence import DEFAULT_TRACKABLE_RATIO, Sequence, trackable_ratio
from .tracklets import DEFAULT_SCALES, DEFAULT_STRIDE_FRAC, Tracklet, build_tracklets

log = logging.getLogger("ebot")

ENGINES = ("warp", "matrix", "oracle")


@dataclass(frozen=True)
class PipelineConfig:
    trackable_ratio: float = DEFAULT_TRACKABLE_RATIO
    sim_threshold: float = DEFAULT_SIM_THRESHOLD
    density_threshold: float = DEFAULT_DENSITY_THRESHOLD
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
    beta: float = DEFAULT_BETA
    hsv_threshold: float = DEFAULT_HSV_THRESHOLD
    iou_match: float = DEFAULT_IOU_MATCH
    normalization: str = "max-scale"
    exclude_occlusions: bool = True
    engine: str = "warp"
    stride_frac: float = DEFAULT_STRIDE_FRAC
    scales: tuple[float, ...] = DEFAULT_SCALES
    radius: Optional[int] = None
    grid: int = DEFAULT_GRID
    bins: int = DEFAULT_BINS
    out_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; expected one of {', '.join(ENGINES)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        # validates L, beta and normalization
        self.confidence

    @property
    def confidence(self) -> ConfidenceConfig:
        return ConfidenceConfig(self.occlusion_threshold, self.beta, self.normalization)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_json(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise formats.FormatError(f"{path}: malformed JSON ({exc.msg})") from exc

    def replace(self, **changes) -> "PipelineConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return PipelineConfig.from_dict(d)


@dataclass
class SequenceResult:
    sequence: Sequence
    ratio: float
    trackable: bool
    tracklets: list[Tracklet] = field(default_factory=list)
    bags: list[EBoT] = field(default_factory=list)
    prototypes: list[Prototype] = field(default_factory=list)
    report: Optional[MotReport] = None


def make_engine(entry: formats.ManifestEntry, config: PipelineConfig) -> SimilarityEngine:
    seq = entry.sequence
    if config.engine == "warp":
        if seq.image_paths is None:
            raise ValueError(f"sequence {seq.id}: engine requires images")
        missing = [p for p in seq.image_paths if not Path(p).exists()]
        if missing:
            raise formats.FormatError(f"sequence {seq.id}: missing image files {', '.join(missing)}")
        return WarpEngine(seq.image_paths, config.grid, config.bins, config.hsv_threshold, config.radius)
    if config.engine == "matrix":
        if entry.score_matrix is None or not entry.score_matrix.exists():
            raise formats.FormatError(f"sequence {seq.id}: matrix engine requires a score_matrix file")
        return ScoreMatrixEngine.load(entry.score_matrix)
    from .synthetic import OracleEngine

    if entry.ground_truth is None:
        raise formats.FormatError(f"sequence {seq.id}: oracle engine requires ground truth")
    gt = formats.read_ground_truth(entry.ground_truth, seq.length)
    return OracleEngine(gt, **entry.oracle)


def gate(seq: Sequence, config: PipelineConfig) -> tuple[float, bool]:
    ratio = trackable_ratio(seq)
    ok = ratio >= config.trackable_ratio
    if ok:
        log.info("gate: %s trackable (ratio %.2f >= %.2f)", seq.id, ratio, config.trackable_ratio)
    else:
        log.info("gate: %s untrackable (ratio %.2f < %.2f)", seq.id, ratio, config.trackable_ratio)
    return ratio, ok


def group_stage(tracklets, seq_len: int, config: PipelineConfig) -> list[EBoT]:
    bags = group_tracklets(tracklets, config.sim_threshold)
    filter_reliable(bags, seq_len, config.density_threshold)
    return bags


def prototype_stage(bags, config: PipelineConfig) -> list[Prototype]:
    return [build_prototype(b, config.confidence) for b in bags if b.reliable]


def run_sequence(
    seq: Sequence,
    engine: Optional[SimilarityEngine],
    config: PipelineConfig,
    gt=None,
) -> SequenceResult:
    ratio, ok = gate(seq, config)
    result = SequenceResult(seq, ratio, ok)
    if not ok:
        return result
    result.tracklets = build_tracklets(
        engine, seq, stride_frac=config.stride_frac, scales=config.scales, workers=config.workers
    )
    log.info("track: %s %d tracklets", seq.id, len(result.tracklets))
    result.bags = group_stage(result.tracklets, seq.length, config)
    n_rel = sum(b.reliable for b in result.bags)
    log.info("group: %s %d eBoTs, %d reliable", seq.id, len(result.bags), n_rel)
    result.prototypes = prototype_stage(result.bags, config)
    for p in result.prototypes:
        log.debug(
            "prototype: %s ebot %d confidence %.4f occluded %d", seq.id, p.ebot_id, p.confidence, p.occluded_count
        )
    if gt is not None:
        result.report = evaluate(result.prototypes, gt, config.iou_match, config.exclude_occlusions)
        log.info("eval: %s MOTA %.4f MOTP %.4f", seq.id, result.report.mota, result.report.motp)
    return result


def write_result(result: SequenceResult, out_dir, config: PipelineConfig) -> Path:
    seq_dir = Path(out_dir) / result.sequence.id
    seq_dir.mkdir(parents=True, exist_ok=True)
    write_gate(seq_dir, result.sequence.id, result.ratio, result.trackable, config)
    if not result.trackable:
        return seq_dir
    formats.write_tracklets(seq_dir / "tracklets.jsonl", result.tracklets)
    formats.write_ebots(seq_dir / "ebots.json", result.bags)
    formats.write_prototypes(seq_dir / "prototypes.jsonl", result.prototypes, config.exclude_occlusions)
    if result.report is not None:
        formats.write_report(seq_dir / "report.json", result.report)
        (seq_dir / "summary.txt").write_text(format_table([(result.sequence.id, result.report)]))
    return seq_dir


def write_gate(seq_dir: Path, seq_id: str, ratio: float, ok: bool, config: PipelineConfig) -> None:
    seq_dir.mkdir(parents=True, exist_ok=True)
    record = {"id": seq_id, "ratio": ratio, "threshold": config.trackable_ratio, "trackable": ok}
    (seq_dir / "gate.json").write_text(json.dumps(record) + "\n")


def run_manifest(manifest_path, config: PipelineConfig) -> list[SequenceResult]:
    """Run every sequence of a manifest and write all artifacts under ``config.out_dir``."""
    entries = formats.read_manifest(manifest_path)
    out_dir = Path(config.out_dir)

    def run(entry):
        seq = entry.sequence
        gt = formats.read_ground_truth(entry.ground_truth, seq.length) if entry.ground_truth else None
        engine = make_engine(entry, config) if trackable_ratio(seq) >= config.trackable_ratio else None
        return run_sequence(seq, engine, config, gt)

    if config.workers > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, entries))
    else:
        results = [run(e) for e in entries]

    # single writer keeps output byte-stable whatever the worker count
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_result(r, out_dir, config)
    rows = [(r.sequence.id, r.report) for r in results if r.report is not None]
    if rows:
        (out_dir / "summary.txt").write_text(format_table(rows))
    return results
