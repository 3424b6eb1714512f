import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import offset, pair_schema, random_scene
from kpt_diagnose.data_model import make_detection, make_gt
from kpt_diagnose.fixtures import InjectionSpec, generate
from kpt_diagnose.matching import match_all, pr_and_ap
from kpt_diagnose.scoring import (find_scoring_errors, histogram_overlap, optimal_rescore,
                                  rescore_report, score_histograms, soft_nms)
from kpt_diagnose.similarity import oks_matrix

S = 10.0


def _gt(i, image, pts, area=S * S):
    return make_gt(i, image, pts, area=area)


def _fig3():
    schema = pair_schema()
    g = _gt(1, 1, [(0, 0), (30, 0)])
    a = make_detection(1, 1, [(offset(0.6), 0), (30 + offset(0.6), 0)], 0.9)
    b = make_detection(2, 1, [(0, offset(0.9)), (30, offset(0.9))], 0.8)
    return schema, [g], [a, b]


def test_fig3_has_one_scoring_error():
    schema, gts, dets = _fig3()
    errs = find_scoring_errors(dets, gts, schema)
    assert [(e.gt_id, e.det_hi, e.det_lo) for e in errs] == [(1, 1, 2)]


def test_no_errors_for_single_or_monotonic():
    schema, gts, dets = _fig3()
    assert find_scoring_errors(dets[:1], gts, schema) == []
    flipped = [dets[0].replace(score=0.1), dets[1]]
    assert find_scoring_errors(flipped, gts, schema) == []


def test_optimal_scores():
    schema, gts, dets = _fig3()
    opt = optimal_rescore(dets, gts, schema)
    assert [d.score for d in opt] == pytest.approx([0.6, 0.9])
    perfect = make_detection(3, 1, gts[0].xy, 0.0)
    lonely = make_detection(4, 2, gts[0].xy, 0.7)
    assert [d.score for d in optimal_rescore([perfect, lonely], gts, schema)] == [1.0, 0.0]


@pytest.mark.filterwarnings("ignore:soft-NMS")  # both detections are flat boxes
def test_fig3_rescore_report():
    schema, gts, dets = _fig3()
    rep = rescore_report(dets, gts, schema)
    assert rep.matches_with_oks_improvement == 1
    assert rep.match_increase == 0
    assert rep.images_with_optimal_order == 0 and rep.images_with_detections == 1
    assert rep.scoring_errors == 1


def test_soft_nms_identical_pair():
    schema = pair_schema()
    a = make_detection(1, 1, [(0, 0), (10, 5)], 0.9)
    b = make_detection(2, 1, [(0, 0), (10, 5)], 0.8)
    out = soft_nms([a, b], schema, sigma=0.5)
    assert out[0].score == 0.9
    assert out[1].score == pytest.approx(0.8 * math.exp(-1 / 0.5), abs=1e-15)


def test_soft_nms_zero_area_warns():
    schema = pair_schema()
    a = make_detection(1, 1, [(0, 0), (0, 0)], 0.9)
    b = make_detection(2, 1, [(0, 0), (0, 0)], 0.8)
    with pytest.warns(RuntimeWarning, match="zero-area"):
        out = soft_nms([a, b], schema)
    assert [d.score for d in out] == [0.9, 0.8]


def test_soft_nms_rejects_bad_sigma():
    with pytest.raises(ValueError):
        soft_nms([], pair_schema(), sigma=0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 5))
def test_soft_nms_only_decays(seed, sigma):
    rng = np.random.default_rng(seed)
    dets, _ = random_scene(rng, 6, 3, tie_rate=0.0)
    dets = [d.replace(score=float(rng.uniform())) for d in dets]
    out = soft_nms(dets, pair_schema(), sigma)
    assert all(b.score <= a.score for a, b in zip(dets, out))
    if dets:
        top = max(dets, key=lambda d: (d.score, -d.id))
        assert next(d for d in out if d.id == top.id).score == top.score


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_optimal_scores_fix_errors_for_isolated_people(seed):
    rng = np.random.default_rng(seed)
    schema = pair_schema()
    dets, gts = [], []
    for img in range(1, 4):
        d, g = random_scene(rng, 4, 1, image_id=img, first_det=len(dets) + 1, first_gt=img,
                            crowd_rate=0.0)
        dets += d
        gts += g
    assert find_scoring_errors(optimal_rescore(dets, gts, schema), gts, schema) == []


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_optimal_scores_never_lose_ap_with_one_detection_per_person(seed):
    # each image holds one person and at most one detection
    rng = np.random.default_rng(seed)
    schema = pair_schema()
    dets, gts = [], []
    for img in range(1, 7):
        d, g = random_scene(rng, int(rng.integers(0, 2)), 1, image_id=img, first_det=img,
                            first_gt=img, crowd_rate=0.0)
        dets += [x.replace(score=float(rng.uniform())) for x in d]
        gts += g
    if all(g.excluded for g in gts):
        return
    before = match_all(dets, gts, schema)
    after = match_all(optimal_rescore(dets, gts, schema), gts, schema)
    for t in (0.5, 0.75, 0.95):
        assert pr_and_ap(after, t).ap >= pr_and_ap(before, t).ap - 1e-12


def test_optimal_scores_can_lower_ap_under_greedy_matching():
    # B sits half a unit below A. D1 lies exactly on A; D2 lies above A, good
    # enough for A but not for B. Ranked by the original scores D2 takes A and
    # D1 takes B. Ranked by OKS, D1 takes A and D2 is left with B.
    schema = pair_schema()
    a = _gt(1, 1, [(0, 0), (30, 0)])
    b = _gt(2, 1, [(0, 0.5), (30, 0.5)])
    d1 = make_detection(1, 1, [(0, 0), (30, 0)], 0.5)
    d2 = make_detection(2, 1, [(0, -0.9), (30, -0.9)], 0.9)
    m = oks_matrix([d1, d2], [a, b], schema)
    assert m[0, 1] > 0.5 and m[1, 0] > 0.5 > m[1, 1]
    before = pr_and_ap(match_all([d1, d2], [a, b], schema), 0.5)
    after = pr_and_ap(match_all(optimal_rescore([d1, d2], [a, b], schema), [a, b], schema), 0.5)
    assert before.tp == 2 and after.tp == 1
    assert after.ap < before.ap


def test_cross_person_scoring_error_survives_optimal_rescore():
    # D1 lies on A and still reaches .135 on B; D2 is a mediocre fit to B only.
    schema = pair_schema()
    a = _gt(1, 1, [(0, 0), (30, 0)])
    b = _gt(2, 1, [(0, 2), (30, 2)])
    d1 = make_detection(1, 1, [(0, 0), (30, 0)], 0.1)
    d2 = make_detection(2, 1, [(0, 2 + offset(0.5)), (30, 2 + offset(0.5))], 0.2)
    errs = find_scoring_errors(optimal_rescore([d1, d2], [a, b], schema), [a, b], schema)
    assert [(e.gt_id, e.det_hi, e.det_lo) for e in errs] == [(2, 1, 2)]


def test_histogram_separation_improves(coco):
    fx = generate(40, 3, InjectionSpec(rates={"jitter": 0.2, "miss": 0.1}, score_mode="random",
                                       background_per_image=1, rng_seed=2), coco)
    h = score_histograms(fx.dets, fx.gts, coco)
    assert h.overlap_optimal <= h.overlap_original
    assert h.original_best.sum() == h.optimal_best.sum()
    assert len(h.rows()) == 20


def test_histogram_overlap_bounds():
    a = np.array([1, 0, 0])
    assert histogram_overlap(a, a) == 1.0
    assert histogram_overlap(a, np.array([0, 0, 3])) == 0.0
    assert histogram_overlap(a, np.zeros(3)) == 0.0
