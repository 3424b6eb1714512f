import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pair_schema, random_scene
from kpt_diagnose.background import (background_impact, clutter_stats, fn_heatmap,
                                     high_conf_fp_histogram, nearest_rank_percentile,
                                     rasterize_instance)
from kpt_diagnose.data_model import ImageRecord, make_detection, make_gt
from kpt_diagnose.matching import match_all

IMG = ImageRecord(1, 100.0, 100.0)


def test_hand_fixture_has_no_background_impact(hand, point_schema):
    _, gts, dets = hand
    for imp in background_impact(match_all(dets, gts, point_schema)):
        assert imp.fn_delta == 0.0 and imp.fp_delta == 0.0


def test_removing_background_fp_at_the_top_helps(point_schema):
    g = make_gt(1, 1, [[0, 0]], area=100.0)
    dets = [make_detection(1, 1, [[500, 500]], 0.9), make_detection(2, 1, [[0, 0]], 0.5)]
    (imp,) = background_impact(match_all(dets, [g], point_schema), thresholds=(0.5,))
    assert imp.ap_baseline == pytest.approx(0.5)
    assert imp.fp_delta == pytest.approx(0.5)
    assert imp.fn_delta == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_removing_background_errors_never_hurts(seed):
    rng = np.random.default_rng(seed)
    dets, gts = [], []
    for img in range(1, 4):
        d, g = random_scene(rng, int(rng.integers(0, 6)), int(rng.integers(0, 5)), image_id=img,
                            first_det=len(dets) + 1, first_gt=len(gts) + 1)
        # push some detections off into the background
        dets += [x.replace(xy=x.xy + 1e3) if rng.uniform() < 0.3 else x for x in d]
        gts += g
    ms = match_all(dets, gts, pair_schema())
    fn = {g for m in ms for g in m.unmatched_gts}
    if not any(not g.excluded and g.id not in fn for g in gts):
        return
    for imp in background_impact(ms):
        assert imp.fn_delta >= -1e-12 and imp.fp_delta >= -1e-12


def test_nearest_rank_percentile():
    assert nearest_rank_percentile(range(1, 11), 80) == 8
    assert nearest_rank_percentile([5.0], 80) == 5.0
    assert np.isnan(nearest_rank_percentile([], 80))


def test_top_twenty_percent_of_ten_scores(point_schema):
    g = make_gt(1, 2, [[0, 0]], area=1.0)
    dets = [make_detection(i, 1, [[10.0 * i, 0], ], i / 10) for i in range(1, 11)]
    ms = match_all(dets, [g], point_schema)
    h = high_conf_fp_histogram(dets, ms)
    assert h.score_cutoff == pytest.approx(0.8)
    assert h.detection_ids == [9, 10]
    assert h.counts == [2, 0, 0, 0, 0]


def test_fp_area_bins():
    schema = pair_schema()
    g = make_gt(1, 2, [[0, 0], [1, 1]], area=1.0)
    sizes = [10, 40, 70, 100, 200, 1]
    dets = [make_detection(i + 1, 1, [[0, 0], [s, s]], 1.0 - i / 100) for i, s in enumerate(sizes)]
    h = high_conf_fp_histogram(dets, match_all(dets, [g], schema), percentile=0)
    assert h.counts == [1, 1, 1, 1, 1]
    assert sum(r["count"] for r in h.rows()) == 5


def _fn(bbox, seg=None):
    return make_gt(1, 1, [[0, 0]], area=100.0, bbox=bbox, segmentation=seg)


def test_left_half_heatmap(point_schema):
    g = _fn((0.0, 0.0, 50.0, 100.0))
    hm = fn_heatmap([g], match_all([], [g], point_schema), [IMG])
    assert hm.counts[:, :64].tolist() == np.ones((128, 64)).tolist()
    assert not hm.counts[:, 64:].any()
    assert hm.normalized.max() == 1.0


def test_full_image_box_is_uniform(point_schema):
    g = _fn((0.0, 0.0, 100.0, 100.0))
    hm = fn_heatmap([g], match_all([], [g], point_schema), [IMG])
    assert (hm.counts == 1).all()


def test_no_false_negatives_gives_zero_map(point_schema):
    g = _fn((0.0, 0.0, 100.0, 100.0))
    ms = match_all([make_detection(1, 1, [[0, 0]], 1.0)], [g], point_schema)
    hm = fn_heatmap([g], ms, [IMG])
    assert not hm.counts.any() and not hm.normalized.any()


def test_missing_geometry_is_skipped_with_warning(point_schema):
    g = _fn((0.0, 0.0, 0.0, 0.0))
    with pytest.warns(RuntimeWarning, match="no mask or box"):
        hm = fn_heatmap([g], match_all([], [g], point_schema), [IMG])
    assert hm.skipped == [1] and not hm.counts.any()


def test_polygon_mask_wins_over_box():
    tri = [[0.0, 0.0, 90.0, 0.0, 0.0, 90.0]]
    m = rasterize_instance(_fn((0.0, 0.0, 100.0, 100.0), tri), IMG, grid=(4, 4))
    expect = np.array([[1, 1, 1, 0], [1, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0]], dtype=bool)
    assert (m == expect).all()


def test_uncompressed_rle_is_column_major():
    rle = {"size": [2, 2], "counts": [1, 3]}
    m = rasterize_instance(_fn((0.0, 0.0, 1.0, 1.0), rle), ImageRecord(1, 2.0, 2.0), grid=(2, 2))
    assert m.tolist() == [[False, True], [True, True]]


def test_compressed_rle_falls_back_to_box():
    rle = {"size": [2, 2], "counts": "abc"}
    m = rasterize_instance(_fn((0.0, 0.0, 50.0, 50.0), rle), IMG, grid=(2, 2))
    assert m.tolist() == [[True, False], [False, False]]


def test_clutter_on_hand_fixture(hand, point_schema):
    _, gts, dets = hand
    c = clutter_stats(match_all(dets, gts, point_schema))
    assert c.avg_people_with_fp == 1.0
    assert c.avg_people_with_fn is None
    assert c.avg_people == 1.5


def test_clutter_undefined_without_people(point_schema):
    c = clutter_stats(match_all([make_detection(1, 1, [[0, 0]], 1.0)], [], point_schema))
    assert c.avg_people is None and c.avg_people_with_fn is None
    assert c.avg_people_with_fp == 0.0
