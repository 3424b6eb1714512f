import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pair_schema, random_scene
from kpt_diagnose.benchmarks import (Bin, BenchmarkSpec, benchmark_all, benchmark_eval, bbox_iou,
                                     cell_matrix, overlap_count, partition, sensitivity_impact)
from kpt_diagnose.data_model import ValidationError, make_gt
from kpt_diagnose.matching import match_all, pr_and_ap


def _box(i, bbox, image=1, **kw):
    return make_gt(i, image, [[bbox[0], bbox[1]]], area=kw.pop("area", bbox[2] * bbox[3]),
                   bbox=bbox, **kw)


def test_bins_are_half_open():
    b = Bin("x", 1, 6)
    assert 1 in b and 5.999 in b and 6 not in b


def test_overlapping_bins_rejected():
    with pytest.raises(ValidationError):
        BenchmarkSpec(overlap_bins=(Bin("a", 0, 2), Bin("b", 1, 3)))
    with pytest.raises(ValidationError):
        BenchmarkSpec(size_bins=(Bin("a", 5, 5),))


def test_bbox_iou():
    assert bbox_iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(1 / 3)
    assert bbox_iou((0, 0, 10, 10), (20, 0, 10, 10)) == 0.0
    assert bbox_iou((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0


def test_overlap_count():
    me = _box(1, (0, 0, 10, 10))
    near = _box(2, (5, 0, 10, 10))
    edge = _box(3, (9, 0, 10, 10))   # IoU 10 / 190, below .1
    crowd = _box(4, (0, 0, 10, 10), iscrowd=True)
    assert overlap_count(me, [me, near, edge, crowd]) == 1


def test_partition_examples(coco):
    vis = np.zeros(17, dtype=int)
    vis[:3] = 2
    lone = make_gt(1, 1, np.zeros((17, 2)), vis, area=100.0**2, bbox=(0, 0, 100, 100))
    cells = partition([lone])
    assert cells["vis1-5|ovl0"] == [1]
    assert cells["size:xlarge"] == [1]
    assert sum(len(v) for v in cells.values()) == 2


def test_small_people_stay_out_of_size_cells():
    cells = partition([_box(1, (0, 0, 10, 10))])
    assert not any(ids for c, ids in cells.items() if c.startswith("size:"))


def _scene(seed, n_images=3):
    rng = np.random.default_rng(seed)
    dets, gts = [], []
    for img in range(1, n_images + 1):
        d, g = random_scene(rng, int(rng.integers(0, 7)), int(rng.integers(0, 6)), image_id=img,
                            first_det=len(dets) + 1, first_gt=len(gts) + 1)
        dets += d
        gts += g
    return dets, gts


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_partition_is_disjoint_and_covering(seed):
    _, gts = _scene(seed)
    cells = partition(gts)
    occ = [i for c, ids in cells.items() if c.startswith("vis") for i in ids]
    assert sorted(occ) == sorted(g.id for g in gts if not g.excluded)
    size = [i for c, ids in cells.items() if c.startswith("size:") for i in ids]
    assert len(size) == len(set(size))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cells_ignore_other_people(seed):
    dets, gts = _scene(seed)
    schema = pair_schema()
    ms = match_all(dets, gts, schema)
    spec = BenchmarkSpec()
    cells = partition(gts, spec)
    res = benchmark_all(ms, cells, thresholds=(0.5, 0.75))
    for c, ids in cells.items():
        for t, r in res[c].results.items():
            assert r.tp + r.fn == len(ids)
    everyone = [g.id for g in gts if not g.excluded]
    if everyone:
        whole = benchmark_eval(ms, everyone, thresholds=(0.5, 0.75))
        for t in (0.5, 0.75):
            ref = pr_and_ap(ms, t)
            assert whole.results[t].ap == ref.ap
            assert whole.results[t].precision.tolist() == ref.precision.tolist()
    # without detections every person is a miss in exactly one occlusion cell
    empty = match_all([], gts, schema)
    fn = sum(r.results[0.5].fn for c, r in benchmark_all(empty, cells, thresholds=(0.5,)).items()
             if c.startswith("vis") and not r.empty)
    assert fn == len(everyone)


def test_two_cells_on_hand_fixture(hand, point_schema):
    _, gts, dets = hand
    ms = match_all(dets, gts, point_schema)
    only3 = benchmark_eval(ms, [3], thresholds=(0.75,))
    assert only3.ap(0.75) == 1.0
    first = benchmark_eval(ms, [1, 2], thresholds=(0.75,))
    r = first.results[0.75]
    assert (r.tp, r.fp, r.fn) == (1, 2, 1)
    assert r.ap == pytest.approx(51 / 101)


def test_empty_cell_is_flagged(hand, point_schema):
    _, gts, dets = hand
    r = benchmark_eval(match_all(dets, gts, point_schema), [], name="nobody")
    assert r.empty and r.ap(0.5) is None
    assert r.to_dict()["empty"] is True


def test_cell_matrix_marks_empty_cells(hand, point_schema):
    _, gts, dets = hand
    ms = match_all(dets, gts, point_schema)
    spec = BenchmarkSpec()
    res = benchmark_all(ms, partition(gts, spec), thresholds=(0.5,))
    m = cell_matrix(res, spec, 0.5)
    assert m[0, 0] == 1.0
    assert np.isnan(m).sum() == m.size - 1


def test_sensitivity_and_impact_are_exact():
    s, i = sensitivity_impact([0.6, 0.7, 0.8, 0.75], 0.72)
    assert s == 0.2 and i == 0.08


def test_sensitivity_skips_missing_cells():
    assert sensitivity_impact([None, 0.5, float("nan"), 0.7], 0.6) == (0.2, 0.1)
    with pytest.raises(ValueError):
        sensitivity_impact([None], 0.5)
