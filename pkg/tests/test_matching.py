import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebot.geometry import BoundingBox
from ebot.matching import (
    OrientationIntegral,
    ScoreMatrixEngine,
    WarpEngine,
    cell_similarity,
    compute_descriptor,
    crop,
    default_radius,
    histogram_intersection,
    hsv_bin_map,
    hsv_histogram,
    hsv_prefilter,
    quadrant_warp_score,
    quadrant_warp_scores,
    score_candidates,
    warp_score_1d,
    window_intersections,
)
from ebot.sequence import Seed
from ebot.synthetic import GenConfig, generate_sequence

from oracles import brute_descriptor, brute_quadrant_score, brute_warp, pixel_votes


def random_image(rng, h=40, w=48):
    return rng.integers(0, 256, (h, w, 3)).astype(np.uint8)


# --------------------------------------------------------------------------
# descriptors


def test_uniform_patch_has_zero_histograms():
    img = np.full((20, 20), 77.0)
    d = compute_descriptor(img, BoundingBox(2, 2, 12, 12))
    assert d.cells.shape == (4, 4, 8)
    assert not d.cells.any()


def test_vertical_step_edge_goes_to_horizontal_gradient_bin():
    img = np.zeros((8, 8))
    img[:, 4:] = 100.0
    d = compute_descriptor(img, BoundingBox(0, 0, 8, 8), grid=2, bins=8)
    # columns 3 and 4 carry gx = 50, gy = 0, i.e. orientation 0, bin 0
    for r in range(2):
        for c in range(2):
            np.testing.assert_allclose(d.cells[r, c], np.eye(8)[0])


def test_descriptor_deterministic_and_matches_pixel_loop():
    rng = np.random.default_rng(3)
    img = random_image(rng)
    box = BoundingBox(5.5, 3.2, 20.7, 17.1)
    a = compute_descriptor(img, box)
    b = compute_descriptor(img, box)
    assert np.array_equal(a.cells, b.cells)
    votes = pixel_votes(img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114, 8)
    ref = brute_descriptor(votes, box.as_list(), 4)
    for r in range(4):
        for c in range(4):
            h = ref[r][c]
            np.testing.assert_allclose(a.cells[r, c], h / np.linalg.norm(h), atol=1e-9)


def test_descriptor_cells_are_unit_or_zero():
    rng = np.random.default_rng(4)
    d = compute_descriptor(random_image(rng), BoundingBox(30, 20, 30, 30))
    norms = np.linalg.norm(d.cells, axis=-1)
    assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0))
    assert np.all(d.cells >= 0)


def test_descriptor_empty_patch():
    with pytest.raises(ValueError, match="empty patch"):
        compute_descriptor(np.zeros((10, 10)), BoundingBox(20, 20, 5, 5))


def test_descriptor_grid_must_be_even():
    with pytest.raises(ValueError):
        compute_descriptor(np.zeros((10, 10)), BoundingBox(0, 0, 5, 5), grid=3)


def test_cell_similarity_examples():
    a = np.array([1.0, 1.0, 0, 0])
    b = np.array([1.0, 0, 0, 0])
    assert cell_similarity(a, a) == pytest.approx(1.0)
    assert cell_similarity(b, np.array([0, 1.0, 0, 0])) == 0.0
    assert cell_similarity(a, b) == pytest.approx(1 / np.sqrt(2))
    assert cell_similarity(np.zeros(4), np.zeros(4)) == 1.0
    assert cell_similarity(np.zeros(4), b) == 0.0
    with pytest.raises(ValueError):
        cell_similarity(np.zeros(3), np.zeros(4))


# --------------------------------------------------------------------------
# 1D warping


def random_hists(rng, n, bins=4):
    out = rng.random((n, bins))
    out[rng.random((n, bins)) < 0.4] = 0.0
    return list(out)


def test_warp_identity():
    rng = np.random.default_rng(0)
    x = random_hists(rng, 5)
    for slack in range(4):
        res = warp_score_1d(x, x, slack)
        assert res.score == pytest.approx(1.0)
        assert res.warp == tuple(range(5))


def test_warp_shift_beyond_slack_scores_below_one():
    eye = list(np.eye(6))
    shifted = eye[3:] + eye[:3]
    assert warp_score_1d(eye, shifted, 1).score < 1.0


def test_warp_errors():
    with pytest.raises(ValueError):
        warp_score_1d([], [], 1)
    with pytest.raises(ValueError):
        warp_score_1d([np.ones(2)], [np.ones(2)] * 2, 1)
    with pytest.raises(ValueError):
        warp_score_1d([np.ones(2)], [np.ones(2)], -1)


def test_warp_matches_enumeration_sample():
    rng = np.random.default_rng(11)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        slack = int(rng.integers(0, 3))
        ref, tgt = random_hists(rng, n), random_hists(rng, n)
        # same cell similarities, so the optimum must agree to the last bit
        assert warp_score_1d(ref, tgt, slack).score == brute_warp(ref, tgt, slack, cell_similarity)
        assert warp_score_1d(ref, tgt, slack).score == pytest.approx(brute_warp(ref, tgt, slack), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2), st.integers(0, 2**31))
def test_warp_score_is_mean_under_returned_warp(n, slack, seed):
    rng = np.random.default_rng(seed)
    ref, tgt = random_hists(rng, n), random_hists(rng, n)
    res = warp_score_1d(ref, tgt, slack)
    w = res.warp
    assert all(w[i] <= w[i + 1] for i in range(n - 1))
    assert all(abs(w[i] - i) <= slack for i in range(n))
    assert res.score == pytest.approx(sum(cell_similarity(ref[i], tgt[w[i]]) for i in range(n)) / n)
    assert 0.0 <= res.score <= 1.0


# --------------------------------------------------------------------------
# quadrant matching


def test_quadrant_self_match_radius_zero():
    rng = np.random.default_rng(1)
    img = random_image(rng)
    box = BoundingBox(10, 8, 16, 16)
    d = compute_descriptor(img, box)
    assert quadrant_warp_score(d, img, box, 0).score == pytest.approx(1.0)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_quadrant_recovers_translation(d):
    rng = np.random.default_rng(d)
    img = random_image(rng, 60, 60)
    box = BoundingBox(20, 18, 16, 16)
    ref = compute_descriptor(img, box)
    moved = np.roll(img, (d, d), axis=(0, 1))
    res = quadrant_warp_score(ref, moved, box, radius=3)
    assert res.score == pytest.approx(1.0, abs=1e-6)
    assert res.quadrant_shifts == ((d, d),) * 4


def test_quadrant_matches_brute_force_sample():
    rng = np.random.default_rng(5)
    for _ in range(6):
        img = random_image(rng, 24, 24)
        gray = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
        votes = pixel_votes(gray, 8)
        src = BoundingBox(*rng.uniform(0, 12, 2), *rng.uniform(4, 12, 2))
        tgt = BoundingBox(*rng.uniform(-2, 14, 2), *rng.uniform(4, 12, 2))
        radius = int(rng.integers(0, 3))
        ref = compute_descriptor(img, src, grid=2)
        ref_cells = [[ref.cells[r, c] for c in range(2)] for r in range(2)]
        got = quadrant_warp_score(ref, img, tgt, radius).score
        assert abs(got - brute_quadrant_score(ref_cells, votes, tgt.as_list(), radius)) < 1e-9


def test_quadrant_shift_equivariance():
    rng = np.random.default_rng(8)
    img = random_image(rng, 64, 64)
    ref = compute_descriptor(img, BoundingBox(24, 24, 16, 16))
    box = BoundingBox(22.5, 25.25, 16, 16)
    for dx, dy in [(1, 0), (0, -2), (3, 2)]:
        moved = np.roll(img, (dy, dx), axis=(0, 1))
        a = quadrant_warp_score(ref, moved, box.translate(dx, dy), 2).score
        b = quadrant_warp_score(ref, img, box, 2).score
        assert a == pytest.approx(b, abs=1e-12)


def test_quadrant_out_of_bounds():
    img = np.zeros((20, 20))
    ref = compute_descriptor(np.eye(20) * 50, BoundingBox(2, 2, 8, 8))
    with pytest.raises(ValueError, match="out of bounds"):
        quadrant_warp_score(ref, img, BoundingBox(40, 40, 8, 8), 2)


def test_quadrant_batch_equals_single():
    rng = np.random.default_rng(9)
    img = random_image(rng, 50, 60)
    ref = compute_descriptor(img, BoundingBox(10, 10, 20, 20))
    integral = OrientationIntegral(img)
    windows = np.column_stack([rng.uniform(-10, 50, 40), rng.uniform(-10, 40, 40), rng.uniform(6, 25, (40, 2))])
    windows[0] = [200, 200, 10, 10]
    got = quadrant_warp_scores(ref, integral, windows, 2, chunk=7)
    assert got[0] == 0.0
    for n in range(1, 40):
        expected = quadrant_warp_score(ref, integral, BoundingBox(*windows[n]), 2).score
        assert got[n] == pytest.approx(expected, abs=1e-12)


def test_default_radius_is_quarter_of_max_side():
    assert default_radius(BoundingBox(0, 0, 20, 36)) == 9


# --------------------------------------------------------------------------
# HSV prefilter


def solid(color, h=6, w=6):
    return np.tile(np.array(color, dtype=np.uint8), (h, w, 1))


def test_hsv_copy_kept_and_threshold_zero():
    rng = np.random.default_rng(2)
    seed = random_image(rng, 8, 8)
    cands = [(BoundingBox(0, 0, 1, 1), seed.copy()), (BoundingBox(1, 0, 1, 1), solid((0, 0, 255)))]
    assert histogram_intersection(hsv_histogram(seed), hsv_histogram(seed)) == pytest.approx(1.0)
    assert hsv_prefilter(seed, cands, 0.5) == [BoundingBox(0, 0, 1, 1)]
    assert hsv_prefilter(seed, cands, 0.0) == [c[0] for c in cands]
    assert hsv_prefilter(seed, [], 0.5) == []


def test_hsv_red_vs_blue_rejected():
    red, blue = solid((255, 0, 0)), solid((0, 0, 255))
    assert histogram_intersection(hsv_histogram(red), hsv_histogram(blue)) == 0.0
    assert hsv_prefilter(red, [(BoundingBox(0, 0, 1, 1), blue)], 0.5) == []


def test_hsv_histogram_is_l1_normalized():
    rng = np.random.default_rng(6)
    hist = hsv_histogram(random_image(rng, 9, 7))
    assert hist.shape == (256,)
    assert hist.sum() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1))
def test_hsv_output_is_subsequence(seed, threshold):
    rng = np.random.default_rng(seed)
    seed_patch = random_image(rng, 5, 5)
    cands = [(BoundingBox(i, 0, 1, 1), random_image(rng, 5, 5) // (i + 1)) for i in range(6)]
    kept = hsv_prefilter(seed_patch, cands, threshold)
    it = iter(c[0] for c in cands)
    assert all(any(k == c for c in it) for k in kept)


def test_hsv_threshold_range():
    with pytest.raises(ValueError):
        hsv_prefilter(solid((1, 2, 3)), [], 1.5)


def test_window_intersections_match_cropped_histograms():
    rng = np.random.default_rng(12)
    img = random_image(rng, 30, 40)
    bins = hsv_bin_map(img)
    seed_hist = hsv_histogram(crop(img, BoundingBox(5, 5, 10, 12)))
    windows = np.column_stack([rng.uniform(-8, 38, 30), rng.uniform(-8, 28, 30), rng.uniform(1, 15, (30, 2))])
    windows[0] = [100, 100, 5, 5]
    got = window_intersections(seed_hist, bins, windows)
    for n, row in enumerate(windows):
        patch = crop(img, BoundingBox(*row))
        expected = histogram_intersection(seed_hist, hsv_histogram(patch)) if patch.size else 0.0
        assert got[n] == pytest.approx(expected, abs=1e-12)


# --------------------------------------------------------------------------
# engines


def test_warp_engine_requires_images():
    with pytest.raises(ValueError, match="engine requires images"):
        WarpEngine().score(Seed(0, 0, BoundingBox(0, 0, 5, 5)), 0, np.zeros((1, 4)))


def test_score_matrix_engine_replays_values(tmp_path):
    engine = ScoreMatrixEngine()
    engine.add(3, 1, [1, 2, 3, 4], 0.25)
    engine.add(3, 1, BoundingBox(0, 0, 3, 4), 0.75)
    seed = Seed(3, 0, BoundingBox(0, 0, 3, 4))
    windows = np.array([[1, 2, 3, 4], [0, 0, 3, 4], [9, 9, 3, 4]], dtype=float)
    assert engine.score(seed, 1, windows).tolist() == [0.25, 0.75, 0.0]
    assert engine.score(seed, 2, windows).tolist() == [0.0, 0.0, 0.0]

    jsonl = tmp_path / "m.jsonl"
    engine.save(jsonl)
    assert ScoreMatrixEngine.load(jsonl).table == engine.table
    array = tmp_path / "m.json"
    array.write_text(json.dumps(engine.records()))
    assert ScoreMatrixEngine.load(array).table == engine.table

    with pytest.raises(ValueError):
        engine.add(0, 0, [0, 0, 1, 1], 1.5)


def test_score_candidates_pairs_boxes_with_scores():
    engine = ScoreMatrixEngine()
    engine.add(0, 1, [0, 0, 2, 2], 0.5)
    out = score_candidates(engine, Seed(0, 0, BoundingBox(0, 0, 2, 2)), 1, [BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 2, 2)])
    assert out == [(BoundingBox(0, 0, 2, 2), 0.5), (BoundingBox(1, 1, 2, 2), 0.0)]


def test_oracle_engine_prefers_gt_box():
    syn = generate_sequence(GenConfig(num_persons=2, rng_seed=5, detector_miss_rate=0, false_positive_rate=0))
    seed = Seed(0, 0, syn.sequence.detections(0)[0])
    ident = syn.engine.identity_of(seed)
    gt_box = syn.ground_truth.visible(3)[ident]
    others = [BoundingBox(5, 5, 30, 36), gt_box.translate(4, 0), gt_box]
    scores = score_candidates(syn.engine, seed, 3, others)
    assert max(scores, key=lambda p: p[1])[0] == gt_box
    assert all(0.0 <= s <= 1.0 for _, s in scores)


def test_warp_engine_separates_two_persons():
    syn = generate_sequence(
        GenConfig(num_frames=4, num_persons=2, rng_seed=21, detector_miss_rate=0, false_positive_rate=0),
        render=True,
    )
    engine = WarpEngine(syn.frames)
    for p in range(2):
        seed = Seed(0, 0, syn.person_boxes[0][p])
        for k in range(1, 4):
            own, other = syn.person_boxes[k][p], syn.person_boxes[k][1 - p]
            s = engine.score(seed, k, np.array([own.as_list(), other.as_list()]))
            assert s[0] > s[1]
            assert np.all((s >= 0) & (s <= 1))
