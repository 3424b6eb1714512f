import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import offset, pair_schema
from kpt_diagnose.data_model import EvalConfig, make_detection, make_gt
from kpt_diagnose.fixtures import InjectionSpec, generate
from kpt_diagnose.matching import match_all
from kpt_diagnose.taxonomy import (ErrorKind, classify_all, classify_detection, classify_keypoint,
                                   error_breakdown, error_frequencies)

S = 10.0  # scale of every person below; k = .1 so scale * k = 1


def _person(i, left, right, vis=(2, 2)):
    return make_gt(i, 1, [left, right], visibility=vis, area=S * S)


def _label(det_xy, me, others=()):
    det = make_detection(1, 1, det_xy, 1.0)
    return classify_detection(det, me, [me, *others], pair_schema())


def test_good_and_jitter():
    me = _person(1, (0, 0), (20, 0))
    labs = _label([(offset(0.9), 0), (20, offset(0.6))], me)
    assert [l.kind for l in labs] == [ErrorKind.GOOD, ErrorKind.JITTER]
    assert labs[0].ks_self == pytest.approx(0.9)


def test_inversion():
    me = _person(1, (0, 0), (20, 0))
    # near the right part: ks .7 with it, ks .2 with its own
    labs = _label([(20 - offset(0.7), 0), (20, 0)], me)
    assert labs[0].kind is ErrorKind.INVERSION
    assert labs[0].wrong_part == (1, 1)
    assert labs[0].ks_wrong == pytest.approx(0.7)
    assert labs[0].ks_self < 0.5


def test_swap():
    me = _person(1, (0, 0), (20, 0))
    other = _person(2, (100, 0), (120, 0))
    labs = _label([(100 + offset(0.6), 0), (20, 0)], me, [other])
    assert labs[0].kind is ErrorKind.SWAP
    assert labs[0].wrong_part == (2, 0)


def test_swap_to_counterpart_of_other_person():
    me = _person(1, (0, 0), (20, 0))
    other = _person(2, (100, 0), (120, 0))
    labs = _label([(120, offset(0.95)), (20, 0)], me, [other])
    assert labs[0].kind is ErrorKind.SWAP and labs[0].wrong_part == (2, 1)


def test_miss():
    me = _person(1, (0, 0), (20, 0))
    labs = _label([(-50, -50), (20, 0)], me)
    assert labs[0].kind is ErrorKind.MISS


def test_unlabeled_is_unclassifiable():
    me = _person(1, (0, 0), (20, 0), vis=(0, 2))
    labs = _label([(0, 0), (20, 0)], me)
    assert labs[0].kind is ErrorKind.UNCLASSIFIABLE


def test_tie_prefers_inversion_then_lowest_person():
    me = _person(1, (0, 0), (20, 0))
    twin = _person(3, (20, 0), (50, 0))   # left part sits where my right part is
    labs = _label([(20, offset(0.8)), (20, 0)], me, [twin])
    assert labs[0].kind is ErrorKind.INVERSION
    a = _person(5, (60, 0), (90, 0))
    b = _person(4, (60, 0), (95, 0))
    labs = _label([(60, offset(0.8)), (20, 0)], me, [a, b])
    assert labs[0].kind is ErrorKind.SWAP and labs[0].wrong_part == (4, 0)


def test_best_candidate_wins():
    me = _person(1, (0, 0), (20, 0))
    other = _person(2, (100, 0), (120, 0))
    # closer to the other person's left than to my right
    labs = _label([(100, offset(0.95)), (20, 0)], me, [other, _person(3, (100, 3), (140, 0))])
    assert labs[0].wrong_part == (2, 0)


def test_excluded_people_are_not_candidates():
    me = _person(1, (0, 0), (20, 0))
    crowd = make_gt(2, 1, [(100, 0), (120, 0)], area=S * S, iscrowd=True)
    labs = _label([(100, 0), (20, 0)], me, [crowd])
    assert labs[0].kind is ErrorKind.MISS


def test_classify_keypoint_matches_detection():
    me = _person(1, (0, 0), (20, 0))
    det = make_detection(1, 1, [(20, 0.5), (20, 0)], 1.0)
    assert classify_keypoint(det, me, [me], 0, pair_schema()) == _label(det.xy, me)[0]


def test_breakdown_counts(coco):
    fx = generate(5, 2, InjectionSpec(rates={"jitter": 0.3, "miss": 0.2}, rng_seed=3), coco)
    ms = match_all(fx.dets, fx.gts, coco)
    labels = classify_all(ms, fx.dets, fx.gts, coco)
    bd = error_breakdown(labels, coco)
    n = sum(1 for dl in labels.values() for l in dl.labels if l.kind is not ErrorKind.UNCLASSIFIABLE)
    assert sum(bd.overall.values()) == n
    assert sum(sum(c.values()) for c in bd.per_group.values()) == n
    fr = bd.overall_fractions
    assert sum(fr.values()) == pytest.approx(1.0)
    assert fr == error_frequencies(list(labels.values()))
    rows = bd.rows()
    assert rows[-1]["scope"] == "overall" and rows[-1]["total"] == n


def test_empty_breakdown(coco):
    bd = error_breakdown({}, coco)
    assert bd.empty
    assert bd.overall_fractions["good"] == 0.0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 20))
def test_labels_exhaustive_and_scale_invariant(seed, alpha):
    rng = np.random.default_rng(seed)
    schema = pair_schema()
    people = [make_gt(i, 1, rng.uniform(0, 40, size=(2, 2)), rng.choice([0, 2], size=2, p=[.2, .8]),
                      area=float(rng.uniform(50, 300))) for i in range(1, 4)]
    people = [p for p in people if not p.excluded]
    if not people:
        return
    det = make_detection(1, 1, rng.uniform(0, 40, size=(2, 2)), 1.0)
    me = people[0]
    cfg = EvalConfig()
    labs = classify_detection(det, me, people, schema, cfg)
    assert len(labs) == 2
    for lab, v in zip(labs, me.visibility):
        assert (lab.kind is ErrorKind.UNCLASSIFIABLE) == (v == 0)
        if lab.kind in (ErrorKind.INVERSION, ErrorKind.SWAP, ErrorKind.MISS):
            assert lab.ks_self < cfg.jitter_threshold
        if lab.kind in (ErrorKind.INVERSION, ErrorKind.SWAP):
            assert lab.ks_wrong >= cfg.jitter_threshold

    def scaled(g):
        return make_gt(g.id, 1, g.xy * alpha, g.visibility, area=g.area * alpha**2)

    big = [scaled(p) for p in people]
    labs2 = classify_detection(det.replace(xy=det.xy * alpha), big[0], big, schema, cfg)
    for a, b in zip(labs, labs2):
        near = any(abs(v - t) < 1e-9 for v in (a.ks_self, a.ks_wrong or 0) for t in (0.5, 0.85))
        if not near:
            assert a.kind is b.kind and a.wrong_part == b.wrong_part
