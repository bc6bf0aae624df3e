"""Command line driver.

Every stage runs standalone on the artifacts written by the previous one
under ``--out/<sequence id>/``; ``all`` chains them in memory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import formats
from .evaluation import evaluate, format_table
from .pipeline import (
    ENGINES,
    PipelineConfig,
    gate,
    group_stage,
    make_engine,
    prototype_stage,
    run_manifest,
    write_gate,
)
from .render import render_overlays
from .synthetic import corpus_configs, write_corpus
from .tracklets import build_tracklets

log = logging.getLogger("ebot")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def setup_logging() -> None:
    level_name = os.environ.get("EBOT_LOG", "info").lower()
    level = LOG_LEVELS.get(level_name, logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    return config.replace(
        engine=getattr(args, "engine", None),
        out_dir=getattr(args, "out", None),
        workers=getattr(args, "workers", None),
    )


def _seq_dir(config: PipelineConfig, seq_id: str) -> Path:
    return Path(config.out_dir) / seq_id


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise formats.FormatError(f"missing {path.name} for {path.parent.name}; run `ebot {stage}` first")
    return path


def _trackable_entries(args, config):
    for entry in formats.read_manifest(args.manifest):
        seq = entry.sequence
        ratio, ok = gate(seq, config)
        write_gate(_seq_dir(config, seq.id), seq.id, ratio, ok, config)
        if ok:
            yield entry


def cmd_gate(args) -> int:
    config = load_config(args)
    list(_trackable_entries(args, config))
    return 0


def cmd_track(args) -> int:
    config = load_config(args)
    for entry in _trackable_entries(args, config):
        seq = entry.sequence
        engine = make_engine(entry, config)
        tracklets = build_tracklets(engine, seq, stride_frac=config.stride_frac, scales=config.scales, workers=config.workers)
        formats.write_tracklets(_seq_dir(config, seq.id) / "tracklets.jsonl", tracklets)
        log.info("track: %s %d tracklets", seq.id, len(tracklets))
    return 0


def cmd_group(args) -> int:
    config = load_config(args)
    for entry in _trackable_entries(args, config):
        seq = entry.sequence
        d = _seq_dir(config, seq.id)
        tracklets = formats.read_tracklets(_need(d / "tracklets.jsonl", "track"))
        bags = group_stage(tracklets, seq.length, config)
        formats.write_ebots(d / "ebots.json", bags)
        log.info("group: %s %d eBoTs, %d reliable", seq.id, len(bags), sum(b.reliable for b in bags))
    return 0


def cmd_prototype(args) -> int:
    config = load_config(args)
    for entry in _trackable_entries(args, config):
        seq = entry.sequence
        d = _seq_dir(config, seq.id)
        tracklets = formats.read_tracklets(_need(d / "tracklets.jsonl", "track"))
        bags = formats.read_ebots(_need(d / "ebots.json", "group"), tracklets)
        protos = prototype_stage(bags, config)
        formats.write_prototypes(d / "prototypes.jsonl", protos, config.exclude_occlusions)
        log.info("prototype: %s %d prototypes", seq.id, len(protos))
    return 0


def cmd_eval(args) -> int:
    config = load_config(args)
    rows = []
    for entry in _trackable_entries(args, config):
        seq = entry.sequence
        if entry.ground_truth is None:
            log.info("eval: %s skipped (no ground truth)", seq.id)
            continue
        d = _seq_dir(config, seq.id)
        tracks, _ = formats.read_prototype_tracks(_need(d / "prototypes.jsonl", "prototype"))
        gt = formats.read_ground_truth(entry.ground_truth, seq.length)
        # boxes of occluded frames were already dropped when prototypes were written
        report = evaluate(tracks, gt, config.iou_match)
        formats.write_report(d / "report.json", report)
        (d / "summary.txt").write_text(format_table([(seq.id, report)]))
        log.info("eval: %s MOTA %.4f MOTP %.4f", seq.id, report.mota, report.motp)
        rows.append((seq.id, report))
    if rows:
        table = format_table(rows)
        (Path(config.out_dir) / "summary.txt").write_text(table)
        sys.stdout.write(table)
    return 0


def cmd_render(args) -> int:
    config = load_config(args)
    for entry in _trackable_entries(args, config):
        seq = entry.sequence
        d = _seq_dir(config, seq.id)
        tracks, _ = formats.read_prototype_tracks(_need(d / "prototypes.jsonl", "prototype"))
        paths = render_overlays(seq, tracks, d / "overlays")
        log.info("render: %s %d frames", seq.id, len(paths))
    return 0


def cmd_all(args) -> int:
    config = load_config(args)
    results = run_manifest(args.manifest, config)
    rows = [(r.sequence.id, r.report) for r in results if r.report is not None]
    if rows:
        sys.stdout.write(format_table(rows))
    return 0


def cmd_synth(args) -> int:
    cfgs = corpus_configs(
        args.count,
        base_seed=args.seed,
        persons=(args.min_persons, args.max_persons),
        occlusion_fraction=args.occlusion_fraction,
        num_frames=args.frames,
        detector_miss_rate=args.miss_rate,
        false_positive_rate=args.fp_rate,
        score_noise=args.noise,
    )
    manifest = write_corpus(args.out, cfgs, render=args.render, export_matrix=not args.no_matrix)
    log.info("synth: wrote %d sequences to %s", len(cfgs), manifest)
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebot", description="Offline multi-face tracking by extended bags-of-tracklets.")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", required=True, help="sequence manifest JSON")
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--engine", choices=ENGINES, help="similarity engine (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--workers", type=int, help="concurrent workers")
        p.set_defaults(func=func)
        return p

    stage("gate", cmd_gate, "check which sequences are trackable")
    stage("track", cmd_track, "propagate every seed into a tracklet")
    stage("group", cmd_group, "group tracklets into eBoTs")
    stage("prototype", cmd_prototype, "extract prototypes with occlusion estimates")
    stage("eval", cmd_eval, "CLEAR MOT evaluation against ground truth")
    stage("render", cmd_render, "draw prototypes onto the frames")
    stage("all", cmd_all, "run every stage")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--min-persons", type=int, default=2)
    p.add_argument("--max-persons", type=int, default=3)
    p.add_argument("--miss-rate", type=float, default=0.2)
    p.add_argument("--fp-rate", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--occlusion-fraction", type=float, default=0.1)
    p.add_argument("--render", action="store_true", help="also write PPM frames")
    p.add_argument("--no-matrix", action="store_true", help="skip the exported oracle score matrix")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except formats.FormatError as exc:
        log.error("input: %s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("io: %s", exc)
        return 3
    except OSError as exc:
        log.error("io: %s", exc)
        return 3
    except ValueError as exc:
        log.error("config: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
