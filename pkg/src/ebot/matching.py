"""Patch similarity: gradient-histogram descriptors, warp matching, HSV prefilter.

Three engines share one interface (:class:`SimilarityEngine`): the pixel
based :class:`WarpEngine`, the precomputed :class:`ScoreMatrixEngine`, and
the ground-truth driven oracle that lives in :mod:`ebot.synthetic`.
"""

from __future__ import annotations

import functools
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .geometry import BoundingBox, array_to_boxes, boxes_to_array
from .sequence import Seed

DEFAULT_GRID = 4
DEFAULT_BINS = 8
DEFAULT_HSV_THRESHOLD = 0.5
HSV_BINS = (8, 8, 4)


# --------------------------------------------------------------------------
# descriptors


def to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(float)
    # ITU-R 601 luma, same weights as PIL's "L" conversion
    rgb = image[..., :3].astype(float)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


class OrientationIntegral:
    """Integral images of gradient magnitude split into orientation bins.

    Gradients are central differences with edge replication; each pixel's
    magnitude is shared linearly between the two nearest of ``bins`` signed
    orientation bins. Any axis-aligned cell histogram then costs four lookups.
    """

    def __init__(self, image: np.ndarray, bins: int = DEFAULT_BINS):
        gray = to_gray(image)
        self.bins = bins
        self.height, self.width = gray.shape
        padded = np.pad(gray, 1, mode="edge")
        gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
        gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
        mag = np.hypot(gx, gy)
        theta = np.mod(np.arctan2(gy, gx), 2 * np.pi)
        pos = theta / (2 * np.pi / bins)
        lo = np.floor(pos).astype(int) % bins
        frac = pos - np.floor(pos)
        hi = (lo + 1) % bins
        maps = np.zeros((bins,) + gray.shape)
        rows, cols = np.indices(gray.shape)
        np.add.at(maps, (lo, rows, cols), mag * (1.0 - frac))
        np.add.at(maps, (hi, rows, cols), mag * frac)
        # bins last, so a cell lookup gathers one contiguous histogram
        integral = np.zeros((self.height + 1, self.width + 1, bins))
        integral[1:, 1:, :] = np.moveaxis(maps, 0, -1).cumsum(axis=0).cumsum(axis=1)
        self.integral = integral
        # integral-image differences leave rounding residue in flat regions
        self.eps = 1e-9 * max(float(integral[-1, -1].max()), 1.0)

    def cell_histograms(self, x0, y0, x1, y1) -> np.ndarray:
        """Histograms of integer cells ``[x0, x1) x [y0, y1)``; arrays broadcast.

        Bounds are clamped to the image; cells left empty get zero histograms.
        Returns shape ``broadcast shape + (bins,)``.
        """
        x0 = np.clip(x0, 0, self.width)
        x1 = np.clip(x1, 0, self.width)
        y0 = np.clip(y0, 0, self.height)
        y1 = np.clip(y1, 0, self.height)
        x1 = np.maximum(x1, x0)
        y1 = np.maximum(y1, y0)
        s = self.integral
        hists = s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]
        return np.where(hists > self.eps, hists, 0.0)


def cell_edges(box: BoundingBox, grid: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer cell boundaries of a ``grid x grid`` split of ``box``."""
    steps = np.arange(grid + 1)
    xe = np.floor(box.x + steps * (box.w / grid)).astype(int)
    ye = np.floor(box.y + steps * (box.h / grid)).astype(int)
    return xe, ye


def _l2_normalize(hists: np.ndarray, axis: int = -1) -> np.ndarray:
    norms = np.linalg.norm(hists, axis=axis, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, hists / safe, 0.0)


@dataclass(frozen=True)
class Descriptor:
    """``grid x grid`` cells, each an L2-normalized orientation histogram."""

    cells: np.ndarray  # shape (grid, grid, bins)
    patch_origin: tuple[float, float]
    patch_size: tuple[float, float]

    @property
    def grid(self) -> int:
        return self.cells.shape[0]

    @property
    def bins(self) -> int:
        return self.cells.shape[2]

    def flat(self) -> list[np.ndarray]:
        """Cells in row-major order, the R-element sequence used by 1D warping."""
        return [self.cells[r, c] for r in range(self.grid) for c in range(self.grid)]


def _check_grid(grid: int) -> None:
    if grid < 2 or grid % 2:
        raise ValueError(f"descriptor grid must be even and >= 2, got {grid}")


def compute_descriptor(
    image,
    box: BoundingBox,
    grid: int = DEFAULT_GRID,
    bins: int = DEFAULT_BINS,
) -> Descriptor:
    """Gradient-orientation descriptor of ``box`` in ``image``.

    ``image`` is a pixel array or a prebuilt :class:`OrientationIntegral`.
    The cell grid is laid out over the unclamped box; cells falling outside
    the image are clamped individually, so partial boxes keep their geometry.
    """
    _check_grid(grid)
    integral = image if isinstance(image, OrientationIntegral) else OrientationIntegral(image, bins)
    xe, ye = cell_edges(box, grid)
    x0 = max(xe[0], 0)
    x1 = min(xe[-1], integral.width)
    y0 = max(ye[0], 0)
    y1 = min(ye[-1], integral.height)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("empty patch")
    hists = integral.cell_histograms(
        xe[None, :-1], ye[:-1, None], xe[None, 1:], ye[1:, None]
    )  # (grid, grid, bins)
    cells = _l2_normalize(hists)
    return Descriptor(cells=cells, patch_origin=(box.x, box.y), patch_size=(box.w, box.h))


def cell_similarity(a, b) -> float:
    """Non-negative cosine similarity of two histograms.

    Two empty histograms match perfectly; an empty one against a non-empty
    one scores zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"histogram bin counts differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(max(float(np.dot(a, b)) / (na * nb), 0.0), 1.0)


# --------------------------------------------------------------------------
# warping


@dataclass(frozen=True)
class WarpResult:
    score: float
    warp: tuple[int, ...]
    quadrant_shifts: tuple[tuple[int, int], ...] = ()


def warp_score_1d(ref, target, slack: int) -> WarpResult:
    """Best mean similarity over monotone warps with bounded displacement.

    The feasible set holds every non-decreasing ``w`` on ``0..R-1`` with
    ``|w(i) - i| <= slack``. Among optimal warps the one with the least total
    displacement is returned, so identical inputs give the identity warp.
    """
    n = len(ref)
    if n == 0:
        raise ValueError("cannot warp empty descriptor sequences")
    if len(target) != n:
        raise ValueError(f"sequence lengths differ: {n} vs {len(target)}")
    if slack < 0:
        raise ValueError("slack must be non-negative")

    sims = np.array([[cell_similarity(ref[i], target[j]) for j in range(n)] for i in range(n)])
    neg_inf = (-math.inf, -math.inf)
    # best[j] = (sum of sims, -total displacement) of the best prefix ending at w(i) = j
    best = [neg_inf] * n
    back = np.full((n, n), -1, dtype=int)
    for j in range(0, min(n - 1, slack) + 1):
        best[j] = (sims[0, j], -abs(j))
    for i in range(1, n):
        new = [neg_inf] * n
        # running max over predecessors j' <= j
        run_val, run_arg = neg_inf, -1
        lo = max(0, i - slack)
        hi = min(n - 1, i + slack)
        for j in range(0, hi + 1):
            if best[j] > run_val:
                run_val, run_arg = best[j], j
            if j >= lo and run_arg >= 0 and run_val != neg_inf:
                new[j] = (run_val[0] + sims[i, j], run_val[1] - abs(j - i))
                back[i, j] = run_arg
        best = new
    end = max(range(n), key=lambda j: (best[j], -j))
    if best[end] == neg_inf:
        raise ValueError("no feasible warping")
    warp = [0] * n
    warp[n - 1] = end
    for i in range(n - 1, 0, -1):
        warp[i - 1] = int(back[i, warp[i]])
    score = sum(float(sims[i, warp[i]]) for i in range(n)) / n
    return WarpResult(score=score, warp=tuple(warp))


@functools.lru_cache(maxsize=64)
def _shift_grid(radius: int) -> tuple[np.ndarray, np.ndarray]:
    """All integer shifts in ``[-radius, radius]^2``, nearest-first."""
    offsets = range(-radius, radius + 1)
    shifts = sorted(((dx, dy) for dy in offsets for dx in offsets), key=lambda s: (abs(s[0]) + abs(s[1]), s[1], s[0]))
    arr = np.array(shifts, dtype=int)
    return arr[:, 0], arr[:, 1]


def _quadrant_cells(grid: int) -> list[list[tuple[int, int]]]:
    half = grid // 2
    quads = []
    for qr in (0, half):
        for qc in (0, half):
            quads.append([(r, c) for r in range(qr, qr + half) for c in range(qc, qc + half)])
    return quads


def default_radius(box: BoundingBox) -> int:
    return int(round(max(box.w, box.h) / 4.0))


def _integral_for(target_image, bins: int) -> OrientationIntegral:
    if isinstance(target_image, OrientationIntegral):
        return target_image
    return OrientationIntegral(target_image, bins)


def _quadrant_search(ref: Descriptor, integral: OrientationIntegral, windows: np.ndarray, radius: int):
    """Per-window quadrant maxima for an ``(N, 4)`` window array.

    Returns ``(scores, shift_index)`` with shapes ``(N,)`` and ``(4, N)``.
    """
    grid = ref.grid
    steps = np.arange(grid + 1)
    xe = np.floor(windows[:, 0:1] + steps[None, :] * (windows[:, 2:3] / grid)).astype(int)
    ye = np.floor(windows[:, 1:2] + steps[None, :] * (windows[:, 3:4] / grid)).astype(int)
    dxs, dys = _shift_grid(radius)
    n = windows.shape[0]
    best = np.zeros((4, n))
    arg = np.zeros((4, n), dtype=int)
    for q, cells in enumerate(_quadrant_cells(grid)):
        total = np.zeros((n, dxs.shape[0]))
        for r, c in cells:
            hists = integral.cell_histograms(
                xe[:, c, None] + dxs[None, :],
                ye[:, r, None] + dys[None, :],
                xe[:, c + 1, None] + dxs[None, :],
                ye[:, r + 1, None] + dys[None, :],
            )  # (n, shifts, bins)
            total += _similarity_to_cell(ref.cells[r, c], hists)
        mean = total / len(cells)
        arg[q] = np.argmax(mean, axis=1)
        best[q] = mean[np.arange(n), arg[q]]
    scores = np.clip(best.sum(axis=0) / 4.0, 0.0, 1.0)
    return scores, arg


def _outside(windows: np.ndarray, radius: int, width: int, height: int) -> np.ndarray:
    """Windows that no shift within ``radius`` brings onto the image."""
    x0 = np.floor(windows[:, 0])
    y0 = np.floor(windows[:, 1])
    x1 = np.floor(windows[:, 0] + windows[:, 2])
    y1 = np.floor(windows[:, 1] + windows[:, 3])
    return (x1 + radius <= 0) | (y1 + radius <= 0) | (x0 - radius >= width) | (y0 - radius >= height)


def quadrant_warp_score(
    ref: Descriptor,
    target_image,
    target_box: BoundingBox,
    radius: Optional[int] = None,
) -> WarpResult:
    """Match ``ref`` against ``target_box`` letting each quadrant move on its own.

    Every quadrant of the reference grid searches integer pixel shifts in
    ``[-radius, radius]^2`` of its sampling position in the target; its score
    is the mean cell similarity over its cells. The total is the mean of the
    four quadrant maxima.
    """
    _check_grid(ref.grid)
    if radius is None:
        radius = default_radius(BoundingBox(0, 0, *ref.patch_size))
    if radius < 0:
        raise ValueError("radius must be non-negative")
    integral = _integral_for(target_image, ref.bins)
    window = np.array([target_box.as_list()], dtype=float)
    if _outside(window, radius, integral.width, integral.height)[0]:
        raise ValueError("out of bounds")
    scores, arg = _quadrant_search(ref, integral, window, radius)
    dxs, dys = _shift_grid(radius)
    shifts = tuple((int(dxs[arg[q, 0]]), int(dys[arg[q, 0]])) for q in range(4))
    return WarpResult(score=float(scores[0]), warp=tuple(range(ref.grid * ref.grid)), quadrant_shifts=shifts)


def quadrant_warp_scores(
    ref: Descriptor,
    target_image,
    windows: np.ndarray,
    radius: Optional[int] = None,
    chunk: int = 64,
) -> np.ndarray:
    """Batched :func:`quadrant_warp_score`; windows off the image score zero."""
    if radius is None:
        radius = default_radius(BoundingBox(0, 0, *ref.patch_size))
    integral = _integral_for(target_image, ref.bins)
    out = np.zeros(windows.shape[0])
    inside = np.flatnonzero(~_outside(windows, radius, integral.width, integral.height))
    for start in range(0, inside.shape[0], chunk):
        idx = inside[start:start + chunk]
        out[idx], _ = _quadrant_search(ref, integral, windows[idx], radius)
    return out


def _similarity_to_cell(ref_cell: np.ndarray, hists: np.ndarray) -> np.ndarray:
    """Vectorized :func:`cell_similarity` of one normalized cell against ``hists[..., bins]``."""
    # cell histograms are clamped at eps, so a zero norm means an empty cell
    norms = np.sqrt(np.einsum("...b,...b->...", hists, hists))
    empty = norms == 0
    if not np.any(ref_cell > 0):
        return np.where(empty, 1.0, 0.0)
    dots = hists @ ref_cell
    sims = np.clip(dots / np.where(empty, 1.0, norms), 0.0, 1.0)
    return np.where(empty, 0.0, sims)


# --------------------------------------------------------------------------
# colour prefilter


def hsv_bin_map(image: np.ndarray) -> np.ndarray:
    """Per-pixel index into the joint 8x8x4 HSV histogram."""
    rgb = np.asarray(image)
    if rgb.ndim == 2:
        rgb = np.stack([rgb] * 3, axis=-1)
    hsv = np.asarray(Image.fromarray(rgb[..., :3].astype(np.uint8), "RGB").convert("HSV")).astype(int)
    hb, sb, vb = HSV_BINS
    h = hsv[..., 0] * hb // 256
    s = hsv[..., 1] * sb // 256
    v = hsv[..., 2] * vb // 256
    return (h * sb + s) * vb + v


def _bins_histogram(bins: np.ndarray) -> np.ndarray:
    hist = np.bincount(bins.ravel(), minlength=int(np.prod(HSV_BINS))).astype(float)
    total = hist.sum()
    return hist / total if total > 0 else hist


def hsv_histogram(patch: np.ndarray) -> np.ndarray:
    """L1-normalized 8x8x4 HSV histogram of a colour patch."""
    return _bins_histogram(hsv_bin_map(patch))


def histogram_intersection(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.minimum(a, b).sum())


def hsv_prefilter(seed_patch, candidates, threshold: float = DEFAULT_HSV_THRESHOLD) -> list[BoundingBox]:
    """Keep candidates whose HSV histogram intersection with the seed reaches ``threshold``.

    ``candidates`` is a list of ``(box, patch)`` pairs; input order is kept.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    seed_hist = hsv_histogram(seed_patch)
    kept = []
    for box, patch in candidates:
        if histogram_intersection(seed_hist, hsv_histogram(patch)) >= threshold:
            kept.append(box)
    return kept


def crop_bounds(box: BoundingBox, width: int, height: int) -> tuple[int, int, int, int]:
    x0 = min(max(int(math.floor(box.x)), 0), width)
    y0 = min(max(int(math.floor(box.y)), 0), height)
    x1 = min(max(int(math.floor(box.x + box.w)), 0), width)
    y1 = min(max(int(math.floor(box.y + box.h)), 0), height)
    return x0, y0, x1, y1


def crop(image: np.ndarray, box: BoundingBox) -> np.ndarray:
    h, w = image.shape[:2]
    x0, y0, x1, y1 = crop_bounds(box, w, h)
    return image[y0:y1, x0:x1]


# --------------------------------------------------------------------------
# engines


class SimilarityEngine:
    """Scores candidate windows against a seed; every score lies in [0, 1]."""

    kind = "base"

    def score(self, seed: Seed, frame_index: int, windows: np.ndarray) -> np.ndarray:
        """Scores for each row ``x, y, w, h`` of ``windows``."""
        raise NotImplementedError


def score_candidates(engine: SimilarityEngine, seed: Seed, frame_index: int, candidates) -> list[tuple[BoundingBox, float]]:
    arr = boxes_to_array(list(candidates))
    scores = engine.score(seed, frame_index, arr)
    return [(box, float(s)) for box, s in zip(array_to_boxes(arr), scores)]


def load_image(path) -> np.ndarray:
    """Read a binary PGM/PPM (or anything Pillow opens) as an RGB uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_image(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode).save(path)


class WarpEngine(SimilarityEngine):
    """Quadrant warp matching on pixels with an HSV colour prefilter.

    ``images`` holds one RGB array or file path per frame; frames are loaded
    and preprocessed lazily and cached.
    """

    kind = "warp"

    def __init__(
        self,
        images=None,
        grid: int = DEFAULT_GRID,
        bins: int = DEFAULT_BINS,
        hsv_threshold: float = DEFAULT_HSV_THRESHOLD,
        radius: Optional[int] = None,
    ):
        _check_grid(grid)
        self.images = list(images) if images is not None else None
        self.grid = grid
        self.bins = bins
        self.hsv_threshold = hsv_threshold
        self.radius = radius
        self._lock = threading.Lock()
        self._frames: dict[int, tuple[np.ndarray, OrientationIntegral, np.ndarray]] = {}
        self._seeds: dict[tuple, tuple[Descriptor, np.ndarray]] = {}

    def _frame(self, k: int):
        with self._lock:
            cached = self._frames.get(k)
        if cached is not None:
            return cached
        if self.images is None:
            raise ValueError("engine requires images")
        src = self.images[k]
        rgb = load_image(src) if isinstance(src, (str, Path)) else np.asarray(src)
        entry = (rgb, OrientationIntegral(rgb, self.bins), hsv_bin_map(rgb))
        with self._lock:
            self._frames[k] = entry
        return entry

    def _seed(self, seed: Seed):
        key = (seed.seed_frame, seed.box)
        with self._lock:
            cached = self._seeds.get(key)
        if cached is not None:
            return cached
        rgb, integral, bins = self._frame(seed.seed_frame)
        desc = compute_descriptor(integral, seed.box, self.grid, self.bins)
        hist = _bins_histogram(crop(bins, seed.box))
        with self._lock:
            self._seeds[key] = (desc, hist)
        return desc, hist

    def score(self, seed: Seed, frame_index: int, windows: np.ndarray) -> np.ndarray:
        if self.images is None:
            raise ValueError("engine requires images")
        desc, seed_hist = self._seed(seed)
        _, integral, bins = self._frame(frame_index)
        radius = self.radius if self.radius is not None else default_radius(seed.box)
        out = np.zeros(windows.shape[0])
        if windows.shape[0] == 0:
            return out
        keep = np.flatnonzero(window_intersections(seed_hist, bins, windows) >= self.hsv_threshold)
        if keep.size:
            out[keep] = quadrant_warp_scores(desc, integral, windows[keep], radius)
        return out


def window_intersections(seed_hist: np.ndarray, bin_map: np.ndarray, windows: np.ndarray) -> np.ndarray:
    """HSV histogram intersection of ``seed_hist`` with every window of ``bin_map``.

    Only bins where the seed has mass can contribute, so one integral count
    map per such bin is enough.
    """
    height, width = bin_map.shape
    x0 = np.clip(np.floor(windows[:, 0]), 0, width).astype(int)
    y0 = np.clip(np.floor(windows[:, 1]), 0, height).astype(int)
    x1 = np.clip(np.floor(windows[:, 0] + windows[:, 2]), 0, width).astype(int)
    y1 = np.clip(np.floor(windows[:, 1] + windows[:, 3]), 0, height).astype(int)
    x1 = np.maximum(x1, x0)
    y1 = np.maximum(y1, y0)
    area = ((x1 - x0) * (y1 - y0)).astype(float)
    safe = np.where(area > 0, area, 1.0)
    total = np.zeros(windows.shape[0])
    counts = np.zeros((height + 1, width + 1))
    for b in np.flatnonzero(seed_hist > 0):
        counts[1:, 1:] = (bin_map == b).cumsum(axis=0).cumsum(axis=1)
        n = counts[y1, x1] - counts[y0, x1] - counts[y1, x0] + counts[y0, x0]
        total += np.minimum(seed_hist[b], n / safe)
    return np.where(area > 0, total, 0.0)


@dataclass
class ScoreMatrixEngine(SimilarityEngine):
    """Replays stored scores; windows absent from the table score zero."""

    table: dict[tuple[int, int], dict[tuple[float, float, float, float], float]] = field(default_factory=dict)
    kind = "matrix"

    def score(self, seed: Seed, frame_index: int, windows: np.ndarray) -> np.ndarray:
        entries = self.table.get((seed.tracklet_id, frame_index))
        if not entries:
            return np.zeros(windows.shape[0])
        return np.array([entries.get(tuple(row), 0.0) for row in windows.tolist()], dtype=float)

    def add(self, tracklet_id: int, frame: int, box, score: float) -> None:
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"stored score {score} outside [0, 1]")
        key = tuple(float(v) for v in (box.as_list() if isinstance(box, BoundingBox) else box))
        self.table.setdefault((tracklet_id, frame), {})[key] = float(score)

    @classmethod
    def load(cls, path) -> "ScoreMatrixEngine":
        """Read score records from a JSON array or a JSON Lines file."""
        text = Path(path).read_text()
        stripped = text.lstrip()
        if stripped.startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
        engine = cls()
        for rec in records:
            for x, y, w, h, s in rec["scores"]:
                engine.add(int(rec["tracklet_id"]), int(rec["frame"]), (x, y, w, h), s)
        return engine

    def records(self) -> list[dict]:
        out = []
        for (tid, frame) in sorted(self.table):
            entries = self.table[(tid, frame)]
            out.append({
                "tracklet_id": tid,
                "frame": frame,
                "scores": [[*key, s] for key, s in entries.items()],
            })
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")
