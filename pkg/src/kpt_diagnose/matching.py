"""Greedy OKS matching and PR/AP/AR accumulation.

Matching runs once per image, independently of any OKS threshold: detections
are visited in descending score order and each takes the still-available
ground truth with the highest OKS. The resulting pairs are then judged at
each threshold. This differs on purpose from pycocotools, which re-matches at
every threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Optional, Sequence

import numpy as np

from .data_model import (Detection, EmptyEvaluationError, EvalConfig, GtInstance,
                         KeypointSchema, group_by_image)
from .parallel import pmap
from .similarity import oks_matrix


def detection_order_key(det: Detection):
    return (-det.score, det.id)


@dataclass(frozen=True)
class MatchSet:
    """Assignment of one image's detections to its ground truth.

    ``pairs`` are ``(detection_id, gt_id, oks)`` in the order they were
    formed; ``order`` lists every detection id in processing order with the
    matching ``scores``.
    """

    image_id: int
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[int, ...]
    unmatched_gts: tuple[int, ...]
    order: tuple[int, ...] = ()
    scores: tuple[float, ...] = ()

    @property
    def gt_ids(self) -> tuple[int, ...]:
        return tuple(sorted([g for _, g, _ in self.pairs] + list(self.unmatched_gts)))

    def pair_of_detection(self) -> dict[int, tuple[int, float]]:
        return {d: (g, o) for d, g, o in self.pairs}

    def pair_of_gt(self) -> dict[int, tuple[int, float]]:
        return {g: (d, o) for d, g, o in self.pairs}


def match_image(dets: Sequence[Detection], gts: Sequence[GtInstance],
                schema: KeypointSchema, config: Optional[EvalConfig] = None,
                image_id: Optional[int] = None) -> MatchSet:
    """Greedily match one image's detections to its non-excluded ground truth.

    Ties are broken by ascending detection id (visit order) and ascending
    ground-truth id (choice among equal OKS). A detection whose best available
    OKS is 0 stays unmatched.
    """
    ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if image_id is not None:
        ids.add(image_id)
    if len(ids) > 1:
        raise ValueError(f"mixed image_ids in one match: {sorted(ids)}")
    if not ids:
        raise ValueError("image_id is required when there are no records")
    image_id = ids.pop()

    gts = sorted((g for g in gts if not g.excluded), key=lambda g: g.id)
    dets = sorted(dets, key=detection_order_key)
    M = oks_matrix(dets, gts, schema)
    taken = np.zeros(len(gts), dtype=bool)
    pairs, unmatched = [], []
    for r, d in enumerate(dets):
        if not len(gts):
            unmatched.append(d.id)
            continue
        row = np.where(taken, -1.0, M[r])
        j = int(np.argmax(row))
        if row[j] > 0:
            taken[j] = True
            pairs.append((d.id, gts[j].id, float(row[j])))
        else:
            unmatched.append(d.id)
    return MatchSet(
        image_id=image_id,
        pairs=tuple(pairs),
        unmatched_detections=tuple(unmatched),
        unmatched_gts=tuple(g.id for g, t in zip(gts, taken) if not t),
        order=tuple(d.id for d in dets),
        scores=tuple(d.score for d in dets),
    )


def _match_task(item, schema):
    image_id, dets, gts = item
    return match_image(dets, gts, schema, image_id=image_id)


def match_all(dets: Iterable[Detection], gts: Iterable[GtInstance], schema: KeypointSchema,
              config: Optional[EvalConfig] = None, workers=1,
              image_ids: Iterable[int] = ()) -> list[MatchSet]:
    """Match every image; results are ordered by image id."""
    by_det = group_by_image(dets)
    by_gt = group_by_image(gts)
    images = sorted(set(by_det) | set(by_gt) | set(image_ids))
    items = [(i, by_det.get(i, []), by_gt.get(i, [])) for i in images]
    return pmap(partial(_match_task, schema=schema), items, workers)


def classify_at_threshold(ms: MatchSet, t: float):
    """Split a match set into ``(tp_pairs, fp_detection_ids, fn_gt_ids)`` at OKS ``t``."""
    tp, fp, fn = [], list(ms.unmatched_detections), list(ms.unmatched_gts)
    for d, g, o in ms.pairs:
        if o >= t:
            tp.append((d, g, o))
        else:
            fp.append(d)
            fn.append(g)
    return tp, sorted(fp), sorted(fn)


@dataclass
class EvalResult:
    threshold: float
    tp: int
    fp: int
    fn: int
    num_gts: int
    ap: float
    ar_at_k: float
    max_dets: int
    recall_grid: np.ndarray
    precision: np.ndarray
    recall_curve: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    precision_curve: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def pr_samples(self) -> list[tuple[float, float]]:
        return list(zip(self.recall_grid.tolist(), self.precision.tolist()))

    def to_dict(self, curve=False) -> dict:
        out = {
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "num_gts": self.num_gts,
            "ap": self.ap,
            "ar": self.ar_at_k,
            "max_dets": self.max_dets,
        }
        if curve:
            out["precision"] = self.precision.tolist()
        return out


def _ledger(match_sets, t, max_dets, gt_ids, drop_detections, drop_gts):
    rows, npos, ntp = [], 0, 0
    for ms in match_sets:
        pair = ms.pair_of_detection()

        def counted(g):
            return (gt_ids is None or g in gt_ids) and g not in drop_gts

        npos += sum(1 for g in ms.gt_ids if counted(g))
        for d, s in zip(ms.order[:max_dets], ms.scores[:max_dets]):
            if d in drop_detections:
                continue
            p = pair.get(d)
            if p is None:
                rows.append((-s, d, False))
                continue
            g, o = p
            if not counted(g):
                continue
            hit = o >= t
            ntp += hit
            rows.append((-s, d, hit))
    rows.sort()
    return rows, npos, ntp


def interpolated_ap(hits: np.ndarray, npos: int, recall_grid: np.ndarray):
    """101-point interpolated AP for a score-sorted TP/FP sequence.

    Returns ``(ap, precision_at_grid, recall_curve, precision_curve)``.
    """
    hits = np.asarray(hits, dtype=bool)
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    rc = tp / npos
    pr = tp / np.maximum(tp + fp, 1)
    q = np.zeros(len(recall_grid))
    if len(hits):
        envelope = np.maximum.accumulate(pr[::-1])[::-1]
        idx = np.searchsorted(rc, recall_grid, side="left")
        inside = idx < len(rc)
        q[inside] = envelope[idx[inside]]
    return float(np.mean(q)), q, rc, pr


def pr_and_ap(match_sets: Sequence[MatchSet], t: float, config: Optional[EvalConfig] = None, *,
              gt_ids=None, drop_detections=frozenset(), drop_gts=frozenset(),
              max_dets: Optional[int] = None) -> EvalResult:
    """PR curve and interpolated AP at OKS threshold ``t``.

    Each image keeps its ``max_dets`` top-scored detections. Ground truths
    outside ``gt_ids`` or inside ``drop_gts`` are ignored: they never count as
    FN and detections matched to them leave the ledger. Detections in
    ``drop_detections`` are removed outright.
    """
    config = config or EvalConfig()
    k = max_dets or config.max_detections_per_image
    rows, npos, ntp = _ledger(match_sets, t, k, gt_ids, drop_detections, drop_gts)
    if npos == 0:
        raise EmptyEvaluationError("no ground truth to evaluate")
    hits = np.array([h for _, _, h in rows], dtype=bool)
    grid = config.recall_grid
    ap, q, rc, pr = interpolated_ap(hits, npos, grid)
    return EvalResult(
        threshold=t, tp=ntp, fp=len(rows) - ntp, fn=npos - ntp, num_gts=npos,
        ap=ap, ar_at_k=ntp / npos, max_dets=k, recall_grid=grid, precision=q,
        recall_curve=rc, precision_curve=pr,
    )


def average_recall(match_sets: Sequence[MatchSet], t: float, k: int, *, gt_ids=None) -> float:
    """Recall at ``t`` when each image keeps only its top-``k`` detections."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _, npos, ntp = _ledger(match_sets, t, k, gt_ids, frozenset(), frozenset())
    return ntp / npos if npos else float("nan")


def evaluate(match_sets: Sequence[MatchSet], config: Optional[EvalConfig] = None,
             **kwargs) -> dict[float, EvalResult]:
    config = config or EvalConfig()
    return {t: pr_and_ap(match_sets, t, config, **kwargs) for t in config.oks_thresholds}


def coco_ap(match_sets: Sequence[MatchSet], config: Optional[EvalConfig] = None) -> float:
    """AP averaged over every configured OKS threshold."""
    config = config or EvalConfig()
    return float(np.mean([pr_and_ap(match_sets, t, config).ap for t in config.oks_thresholds]))


def coco_ar(match_sets: Sequence[MatchSet], config: Optional[EvalConfig] = None) -> float:
    config = config or EvalConfig()
    k = config.max_detections_per_image
    return float(np.mean([average_recall(match_sets, t, k) for t in config.oks_thresholds]))
