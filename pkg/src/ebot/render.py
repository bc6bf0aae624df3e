"""Draw prototype boxes onto the sequence frames."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .matching import load_image, save_image

PALETTE = [
    (255, 0, 0),
    (0, 255, 0),
    (0, 128, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
    (255, 128, 0),
    (128, 0, 255),
]
STROKE = 2


def color_for(rank: int) -> tuple[int, int, int]:
    return PALETTE[rank % len(PALETTE)]


def draw_box(img: np.ndarray, box, color, stroke: int = STROKE) -> None:
    h, w = img.shape[:2]
    x0 = max(int(math.floor(box.x)), 0)
    y0 = max(int(math.floor(box.y)), 0)
    x1 = min(int(math.floor(box.x + box.w)), w)
    y1 = min(int(math.floor(box.y + box.h)), h)
    if x1 <= x0 or y1 <= y0:
        return
    c = np.asarray(color, dtype=img.dtype)
    img[y0:min(y0 + stroke, y1), x0:x1] = c
    img[max(y1 - stroke, y0):y1, x0:x1] = c
    img[y0:y1, x0:min(x0 + stroke, x1)] = c
    img[y0:y1, max(x1 - stroke, x0):x1] = c


def overlay_frames(frames, tracks) -> list[np.ndarray]:
    """Copies of ``frames`` with each track's box drawn; ``None`` boxes are skipped.

    Colours follow the sorted track ids, so they are stable across runs.
    """
    out = [np.array(f, dtype=np.uint8, copy=True) for f in frames]
    for rank, tid in enumerate(sorted(tracks)):
        color = color_for(rank)
        for k, box in enumerate(tracks[tid]):
            if box is not None and k < len(out):
                draw_box(out[k], box, color)
    return out


def render_overlays(seq, tracks, out_dir) -> list[Path]:
    """Write one PPM per frame with prototype boxes drawn over the sequence images."""
    if seq.image_paths is None:
        raise ValueError(f"sequence {seq.id}: no images to render on")
    missing = [p for p in seq.image_paths if not Path(p).exists()]
    if missing:
        raise FileNotFoundError(f"missing frames: {', '.join(missing)}")
    frames = [load_image(p) for p in seq.image_paths]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(overlay_frames(frames, tracks)):
        path = out_dir / f"{k:03d}.ppm"
        save_image(path, img)
        paths.append(path)
    return paths
