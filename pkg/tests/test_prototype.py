import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebot.grouping import EBoT
from ebot.prototype import (
    ConfidenceConfig,
    build_prototype,
    calibrate_threshold,
    estimate_occlusions,
    extract_prototype,
    frame_confidence,
    normalize_scores,
    occlusion_weight,
    prototype_confidence,
    tracklet_confidence,
)

from conftest import make_tracklet
from oracles import brute_prototype_choice


def bag_of(rows, scores=None):
    scores = scores or [None] * len(rows)
    return EBoT(0, [make_tracklet(i, r, s) for i, (r, s) in enumerate(zip(rows, scores))])


def test_single_member_prototype():
    rows = [[(0, 0, 5, 5), (3, 3, 5, 5)]]
    assert extract_prototype(bag_of(rows)) == list(bag_of(rows).tracklets[0].boxes)


def test_prototype_majority_box():
    bag = bag_of([[(0, 0, 10, 10)], [(0, 0, 10, 10)], [(100, 100, 10, 10)]])
    assert extract_prototype(bag)[0].as_list() == [0, 0, 10, 10]


def test_prototype_tie_break_by_score_then_id():
    # both members overlap each other equally; the higher own score wins
    bag = bag_of([[(0, 0, 10, 10)], [(2, 0, 10, 10)]], scores=[[0.4], [0.9]])
    assert extract_prototype(bag)[0].x == 2
    bag = bag_of([[(0, 0, 10, 10)], [(2, 0, 10, 10)]], scores=[[0.5], [0.5]])
    assert extract_prototype(bag)[0].x == 0


def test_prototype_empty_bag():
    with pytest.raises(ValueError):
        extract_prototype(EBoT(0, []))


grid_box = st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(1, 5), st.integers(1, 5))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.data())
def test_prototype_matches_brute_force(n_members, n_frames, data):
    rows = [data.draw(st.lists(grid_box, min_size=n_frames, max_size=n_frames)) for _ in range(n_members)]
    scores = [data.draw(st.lists(st.sampled_from([0.2, 0.5, 1.0]), min_size=n_frames, max_size=n_frames)) for _ in range(n_members)]
    bag = bag_of(rows, scores)
    chosen = brute_prototype_choice(rows, scores, list(range(n_members)))
    expected = [bag.tracklets[i].boxes[k] for k, i in enumerate(chosen)]
    assert extract_prototype(bag) == expected


def test_normalize_examples():
    bag = bag_of([[(0, 0, 1, 1)] * 3], scores=[[2, 4, 6]])
    np.testing.assert_allclose(normalize_scores(bag, "max-scale")[0], [1 / 3, 2 / 3, 1])
    np.testing.assert_allclose(normalize_scores(bag, "min-max")[0], [0, 0.5, 1])
    flat = bag_of([[(0, 0, 1, 1)] * 3], scores=[[0.3, 0.3, 0.3]])
    assert normalize_scores(flat).tolist() == [[1.0, 1.0, 1.0]]
    unit = bag_of([[(0, 0, 1, 1)] * 3], scores=[[0.2, 1.0, 0.5]])
    assert normalize_scores(unit).tolist() == [[0.2, 1.0, 0.5]]
    assert normalize_scores(unit, "none").tolist() == [[0.2, 1.0, 0.5]]
    with pytest.raises(ValueError):
        normalize_scores(unit, "zscore")


def test_frame_confidence_examples():
    one = bag_of([[(0, 0, 1, 1)]], scores=[[0.7]])
    assert frame_confidence(one, 0, normalize_scores(one, "none")) == pytest.approx(0.7)
    three = np.array([[0.4], [0.6], [0.8]])
    assert frame_confidence(None, 0, three) == pytest.approx(0.6)
    assert frame_confidence(None, 0, np.zeros((3, 1))) == 0.0
    with pytest.raises(IndexError):
        frame_confidence(None, 1, three)


def test_estimate_occlusions_examples():
    refined, flags = estimate_occlusions([0.5, 0.05, 0.3], 0.12)
    assert refined == [0.5, 0.0, 0.3] and flags == [False, True, False]
    assert estimate_occlusions([0.2, 0.9], 0.12) == ([0.2, 0.9], [False, False])
    assert estimate_occlusions([0.12], 0.12) == ([0.12], [False])


def test_prototype_confidence_examples():
    assert prototype_confidence([0.5, 0.7, 0.9], 0, 1.0) == pytest.approx(0.7)
    assert prototype_confidence([0.0] * 4, 4, 1.0) == 0.0
    refined = [0.5] * 8 + [0.0, 0.0]
    assert prototype_confidence(refined, 2, 1.0) == pytest.approx(0.4 * (1 + math.log(0.8)), abs=1e-12)
    with pytest.raises(ValueError):
        prototype_confidence(refined, 11, 1.0)


def test_weight_vanishes_at_analytic_anchor():
    # weight 1 + beta ln(1 - z/n) is zero at z/n = 1 - exp(-1/beta)
    beta = 1.0
    n = 1000
    z = round(n * (1 - math.exp(-1 / beta)))
    assert occlusion_weight(n, z, beta) == pytest.approx(0.0, abs=2e-3)
    assert occlusion_weight(n, z + 5, beta) == 0.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 3))
def test_confidence_properties(values, beta):
    n = len(values)
    assert prototype_confidence(values, 0, beta) == pytest.approx(sum(values) / n)
    previous = math.inf
    for z in range(n + 1):
        c = prototype_confidence(values, z, beta)
        assert c <= previous + 1e-12
        previous = c
    refined, flags = estimate_occlusions(values, 0.12)
    assert all(v == 0.0 or v >= 0.12 for v in refined)
    assert all(f == (v == 0.0 and c < 0.12) for f, v, c in zip(flags, refined, values))


def test_build_prototype_consistency():
    rows = [[(0, 0, 10, 10)] * 4, [(1, 0, 10, 10)] * 4]
    bag = bag_of(rows, scores=[[1.0, 0.05, 0.8, 0.6], [1.0, 0.1, 0.6, 0.6]])
    p = build_prototype(bag)
    assert len(p.boxes) == len(p.frame_confidence) == len(p.occluded) == 4
    assert p.occluded == [False, True, False, False]
    assert all((c == 0.0) == o for c, o in zip(p.frame_confidence, p.occluded))
    assert p.raw_confidence[1] == pytest.approx(0.075)
    expected = (1.0 + 0.7 + 0.6) / 4 * (1 + math.log(0.75))
    assert p.confidence == pytest.approx(expected)
    assert p.tracklet_confidences[0] == pytest.approx(tracklet_confidence([1.0, 0.05, 0.8, 0.6]))
    assert p.emitted_boxes(True)[1] is None
    assert p.emitted_boxes(False)[1] is not None


def test_config_validation():
    with pytest.raises(ValueError):
        ConfidenceConfig(L=1.5)
    with pytest.raises(ValueError):
        ConfidenceConfig(beta=-1)
    with pytest.raises(ValueError):
        ConfidenceConfig(normalization="other")


def test_calibrate_threshold():
    assert calibrate_threshold([[0.05, 0.10, 0.2], [0.12], [0.14, 0.14]]) == pytest.approx(0.12)
    assert calibrate_threshold([[0.33]]) == 0.33
    with pytest.raises(ValueError):
        calibrate_threshold([])
