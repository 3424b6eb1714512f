"""Correction of localization errors and fine-grained progressive PR curves.

Corrected keypoints stay on the ray from the true part through the old
prediction:

* jitter moves to the ``good_threshold`` ks circle,
* miss moves to the ``jitter_threshold`` ks circle,
* inversion and swap move to the distance at which the true part gets the ks
  the prediction had with the part it was confused with.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .data_model import (Detection, EmptyEvaluationError, EvalConfig, GtInstance,
                         KeypointSchema, ValidationError)
from .matching import EvalResult, MatchSet, classify_at_threshold, match_all, pr_and_ap
from .scoring import rescore
from .taxonomy import DetectionLabels, ErrorKind, KeypointErrorLabel, classify_all

CORRECTABLE = frozenset({ErrorKind.JITTER, ErrorKind.INVERSION, ErrorKind.SWAP, ErrorKind.MISS})


class Stage(str, Enum):
    MISS = "miss"
    SWAP = "swap"
    INVERSION = "inversion"
    JITTER = "jitter"
    OPT_SCORE = "opt_score"
    REMOVE_BG_FP = "bkg_fp"
    REMOVE_FN = "fn"

    def __str__(self):
        return self.value


DEFAULT_STAGES = (Stage.MISS, Stage.SWAP, Stage.INVERSION, Stage.JITTER,
                  Stage.OPT_SCORE, Stage.REMOVE_BG_FP, Stage.REMOVE_FN)

_STAGE_KIND = {
    Stage.MISS: ErrorKind.MISS,
    Stage.SWAP: ErrorKind.SWAP,
    Stage.INVERSION: ErrorKind.INVERSION,
    Stage.JITTER: ErrorKind.JITTER,
}


@dataclass(frozen=True)
class CorrectionPlan:
    stages: tuple[Stage, ...] = DEFAULT_STAGES
    threshold: float = 0.75

    def __post_init__(self):
        try:
            stages = tuple(Stage(s) for s in self.stages)
        except ValueError as exc:
            raise ValidationError(f"unknown stage in plan: {exc}") from exc
        if len(set(stages)) != len(stages):
            raise ValidationError("a correction plan may list each stage once")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def parse(cls, text: str, threshold: float = 0.75) -> "CorrectionPlan":
        return cls(tuple(s.strip() for s in text.split(",") if s.strip()), threshold)

    def check(self, config: EvalConfig) -> None:
        if not any(abs(self.threshold - t) < 1e-12 for t in config.oks_thresholds):
            raise ValidationError(f"plan threshold {self.threshold} is not an evaluation threshold")


def _target_ks(label: KeypointErrorLabel, config: EvalConfig) -> float:
    if label.kind is ErrorKind.JITTER:
        return config.good_threshold
    if label.kind is ErrorKind.MISS:
        return config.jitter_threshold
    if label.kind in (ErrorKind.INVERSION, ErrorKind.SWAP):
        return label.ks_wrong
    raise ValueError(f"cannot correct a keypoint labeled {label.kind}")


def _move(old, target, ks, scale, k):
    """Points on the rays from ``target`` through ``old`` at which ks equals ``ks``."""
    ks = np.asarray(ks, dtype=float)
    dist = np.where(ks >= 1.0, 0.0, scale * k * np.sqrt(-2.0 * np.log(np.minimum(ks, 1.0))))
    v = np.asarray(old, dtype=float) - target
    n = np.hypot(v[..., 0], v[..., 1])[..., None]
    u = np.where(n > 0, v / np.where(n > 0, n, 1.0), np.array([1.0, 0.0]))
    return target + dist[..., None] * u


def correct_keypoint(label: KeypointErrorLabel, det: Detection, gt: GtInstance, i: int,
                     schema: KeypointSchema, config: Optional[EvalConfig] = None) -> np.ndarray:
    """New position for keypoint ``i`` of ``det`` given its error label."""
    config = config or EvalConfig()
    return _move(det.xy[i], gt.xy[i], _target_ks(label, config), gt.scale,
                 float(schema.k_constants[i]))


def corrected_detection(det: Detection, gt: GtInstance, labels: Sequence[KeypointErrorLabel],
                        kinds, schema, config=None) -> Detection:
    config = config or EvalConfig()
    idx = [i for i, lab in enumerate(labels) if lab.kind in kinds and lab.kind in CORRECTABLE]
    if not idx:
        return det
    ks = [_target_ks(labels[i], config) for i in idx]
    xy = np.array(det.xy, dtype=float)
    k = np.asarray(schema.k_constants, dtype=float)[idx]
    xy[idx] = _move(xy[idx], gt.xy[idx], ks, gt.scale, k)
    return det.replace(xy=xy)


def _oks_pair(a, b, gt, k2):
    vis = gt.visibility > 0
    out = []
    for xy in (a, b):
        d = xy - gt.xy
        ks = np.exp(-np.sum(d * d, axis=1) / (2.0 * gt.area * k2))
        out.append(float(ks[vis].mean()))
    return out


def _labels_for(dets, gts, schema, config, labels, match_sets, workers):
    if labels is None:
        if match_sets is None:
            match_sets = match_all(dets, gts, schema, config, workers=workers)
        labels = classify_all(match_sets, dets, gts, schema, config, workers=workers)
    return labels


def apply_correction(dets: Sequence[Detection], gts: Sequence[GtInstance], kinds: Iterable,
                     schema: KeypointSchema, config: Optional[EvalConfig] = None, *,
                     labels: Optional[dict[int, DetectionLabels]] = None,
                     match_sets: Optional[Sequence[MatchSet]] = None, workers=1):
    """Move the keypoints whose label is in ``kinds``.

    Returns ``(corrected_detections, oks_delta)`` where ``oks_delta`` maps each
    matched detection id to its OKS gain against its matched ground truth.
    """
    config = config or EvalConfig()
    kinds = frozenset(ErrorKind(k) for k in kinds)
    labels = _labels_for(dets, gts, schema, config, labels, match_sets, workers)
    gt_by_id = {g.id: g for g in gts}
    k2 = np.asarray(schema.k_constants, dtype=float) ** 2
    out, deltas = [], {}
    for d in dets:
        dl = labels.get(d.id)
        if dl is None:
            out.append(d)
            continue
        g = gt_by_id[dl.gt_id]
        new = corrected_detection(d, g, dl.labels, kinds, schema, config) if kinds else d
        if new is d:
            deltas[d.id] = 0.0
        else:
            before, after = _oks_pair(d.xy, new.xy, g, k2)
            delta = after - before
            assert delta >= -1e-12, f"correction lowered OKS of detection {d.id}"
            deltas[d.id] = delta
        out.append(new)
    return out, deltas


@dataclass
class KindImpact:
    kind: ErrorKind
    count: int
    oks_delta_median: float
    oks_delta_q1: float
    oks_delta_q3: float
    ap_delta: dict[float, float]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "count": self.count,
            "oks_delta": {"median": self.oks_delta_median, "q1": self.oks_delta_q1,
                          "q3": self.oks_delta_q3},
            "ap_delta": {f"{t:g}": v for t, v in self.ap_delta.items()},
        }


def separate_impact(dets, gts, schema, config=None, *, thresholds=(0.75, 0.5),
                    labels=None, match_sets=None, workers=1) -> dict[ErrorKind, KindImpact]:
    """Correct each localization error kind on its own and measure the gain."""
    config = config or EvalConfig()
    if match_sets is None:
        match_sets = match_all(dets, gts, schema, config, workers=workers)
    labels = _labels_for(dets, gts, schema, config, labels, match_sets, workers)
    base = {t: pr_and_ap(match_sets, t, config).ap for t in thresholds}
    out = {}
    for kind in (ErrorKind.MISS, ErrorKind.SWAP, ErrorKind.INVERSION, ErrorKind.JITTER):
        count = sum(1 for dl in labels.values() for lab in dl.labels if lab.kind is kind)
        fixed, deltas = apply_correction(dets, gts, {kind}, schema, config, labels=labels)
        vals = np.array(list(deltas.values())) if deltas else np.zeros(1)
        q1, med, q3 = (float(v) for v in np.percentile(vals, [25, 50, 75]))
        if count:
            ms = match_all(fixed, gts, schema, config, workers=workers)
            ap = {t: pr_and_ap(ms, t, config).ap - base[t] for t in thresholds}
        else:
            ap = {t: 0.0 for t in thresholds}
        out[kind] = KindImpact(kind, count, med, q1, q3, ap)
    return out


@dataclass
class StageResult:
    name: str
    result: Optional[EvalResult]

    @property
    def ap(self) -> Optional[float]:
        return None if self.result is None else self.result.ap


@dataclass
class ProgressiveResult:
    threshold: float
    stages: list[StageResult] = field(default_factory=list)

    @property
    def aps(self) -> list[Optional[float]]:
        return [s.ap for s in self.stages]

    def attribution(self) -> dict[str, Optional[float]]:
        """AP gained by each stage over the previous one."""
        out = {}
        for prev, cur in zip(self.stages, self.stages[1:]):
            out[cur.name] = None if prev.ap is None or cur.ap is None else cur.ap - prev.ap
        return out

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "stages": [{"name": s.name, "ap": s.ap} for s in self.stages],
            "attribution": self.attribution(),
        }


def _threshold_drops(match_sets, t, k, drop_fp, drop_fn):
    drop_d, drop_g = set(), set()
    for ms in match_sets:
        kept = set(ms.order[:k])
        tp, fp, fn = classify_at_threshold(ms, t)
        tp_kept = [(d, g) for d, g, _ in tp if d in kept]
        if drop_fp:
            tp_dets = {d for d, _ in tp_kept}
            drop_d.update(d for d in kept if d not in tp_dets)
        if drop_fn:
            tp_gts = {g for _, g in tp_kept}
            drop_g.update(g for g in ms.gt_ids if g not in tp_gts)
    return drop_d, drop_g


def progressive_pr(dets, gts, plan: CorrectionPlan, schema, config=None, *, sigma=0.5,
                   labels=None, match_sets=None, workers=1) -> ProgressiveResult:
    """Evaluate at ``plan.threshold`` after applying stages 1..s, for every s.

    Localization stages move keypoints (labels come from the original
    matching), the score stage substitutes optimal scores followed by
    soft-NMS, and the two background stages drop every detection that is not
    a true positive at the plan threshold and every ground truth left without
    a true positive.
    """
    config = config or EvalConfig()
    plan.check(config)
    t = plan.threshold
    k = config.max_detections_per_image
    if match_sets is None:
        match_sets = match_all(dets, gts, schema, config, workers=workers)
    labels = _labels_for(dets, gts, schema, config, labels, match_sets, workers)

    out = ProgressiveResult(t, [StageResult("original", pr_and_ap(match_sets, t, config))])
    kinds: set[ErrorKind] = set()
    rescored = drop_fp = drop_fn = False
    matched = {(frozenset(), False): match_sets}
    for stage in plan.stages:
        if stage in _STAGE_KIND:
            kinds.add(_STAGE_KIND[stage])
        elif stage is Stage.OPT_SCORE:
            rescored = True
        elif stage is Stage.REMOVE_BG_FP:
            drop_fp = True
        else:
            drop_fn = True
        key = (frozenset(kinds), rescored)
        if key not in matched:
            cur = list(dets)
            if kinds:
                cur = apply_correction(cur, gts, kinds, schema, config, labels=labels)[0]
            if rescored:
                cur = rescore(cur, gts, schema, sigma)
            matched[key] = match_all(cur, gts, schema, config, workers=workers)
        ms = matched[key]
        drop_d, drop_g = _threshold_drops(ms, t, k, drop_fp, drop_fn)
        try:
            res = pr_and_ap(ms, t, config, drop_detections=drop_d, drop_gts=drop_g)
        except EmptyEvaluationError:
            res = None
        out.stages.append(StageResult(stage.value, res))
    return out
