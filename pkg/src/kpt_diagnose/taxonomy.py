"""Localization-error taxonomy for the keypoints of matched detections."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import Mapping, Optional, Sequence

import numpy as np

from .data_model import Detection, EvalConfig, GtInstance, KeypointSchema, group_by_image
from .matching import MatchSet
from .parallel import pmap


class ErrorKind(str, Enum):
    GOOD = "good"
    JITTER = "jitter"
    INVERSION = "inversion"
    SWAP = "swap"
    MISS = "miss"
    UNCLASSIFIABLE = "unclassifiable"

    def __str__(self):
        return self.value


LOCALIZATION_ERRORS = (ErrorKind.MISS, ErrorKind.SWAP, ErrorKind.INVERSION, ErrorKind.JITTER)
CLASSIFIABLE = (ErrorKind.GOOD, ErrorKind.JITTER, ErrorKind.INVERSION, ErrorKind.SWAP, ErrorKind.MISS)


@dataclass(frozen=True)
class KeypointErrorLabel:
    kind: ErrorKind
    ks_self: float
    wrong_part: Optional[tuple[int, int]] = None  # (gt id, keypoint index)
    ks_wrong: Optional[float] = None


@dataclass(frozen=True)
class DetectionLabels:
    detection_id: int
    gt_id: int
    image_id: int
    labels: tuple[KeypointErrorLabel, ...]


def classify_detection(det: Detection, matched_gt: GtInstance,
                       gts_in_image: Sequence[GtInstance], schema: KeypointSchema,
                       config: Optional[EvalConfig] = None) -> tuple[KeypointErrorLabel, ...]:
    """Label every keypoint of ``det`` against its matched ground truth.

    Candidates for a keypoint below the jitter threshold are the counterpart
    part on the matched person (inversion) and the same or counterpart part on
    every other non-excluded person (swap). The best candidate at or above
    the jitter threshold wins; equal ks prefers inversion, then the lowest
    person id, then the lowest part index.
    """
    config = config or EvalConfig()
    K = schema.num_keypoints
    others = sorted((g for g in gts_in_image if g.id != matched_gt.id and not g.excluded),
                    key=lambda g: g.id)
    idx = np.arange(K)
    cp = np.array([c if c is not None else i for i, c in enumerate(schema.counterpart)])
    has_cp = np.array([c is not None for c in schema.counterpart])

    # point i against part i (or part cp(i)) of one person, -1 where unlabeled
    def per_part(gt, parts):
        k = schema.k_constants[parts]
        d = gt.xy[parts] - det.xy
        ks = np.exp(-np.sum(d * d, axis=-1) / (2.0 * gt.area * k * k))
        return np.where(gt.visibility[parts] > 0, ks, -1.0)

    self_ks = per_part(matched_gt, idx)
    inv_ks = np.where(has_cp, per_part(matched_gt, cp), -1.0)
    other_same = [per_part(g, idx) for g in others]
    other_cp = [np.where(has_cp, per_part(g, cp), -1.0) for g in others]

    labels = []
    for i in range(K):
        if matched_gt.visibility[i] <= 0:
            labels.append(KeypointErrorLabel(ErrorKind.UNCLASSIFIABLE, float("nan")))
            continue
        ks = float(self_ks[i])
        if ks >= config.good_threshold:
            labels.append(KeypointErrorLabel(ErrorKind.GOOD, ks))
            continue
        if ks >= config.jitter_threshold:
            labels.append(KeypointErrorLabel(ErrorKind.JITTER, ks))
            continue
        # (ks, kind rank, person id, part) ; kind rank 0 = inversion
        cands = []
        if inv_ks[i] >= config.jitter_threshold:
            cands.append((-float(inv_ks[i]), 0, matched_gt.id, int(cp[i])))
        for g, same, cpk in zip(others, other_same, other_cp):
            if same[i] >= config.jitter_threshold:
                cands.append((-float(same[i]), 1, g.id, i))
            if has_cp[i] and cpk[i] >= config.jitter_threshold:
                cands.append((-float(cpk[i]), 1, g.id, int(cp[i])))
        if not cands:
            labels.append(KeypointErrorLabel(ErrorKind.MISS, ks))
            continue
        neg_ks, rank, pid, part = min(cands)
        kind = ErrorKind.INVERSION if rank == 0 else ErrorKind.SWAP
        labels.append(KeypointErrorLabel(kind, ks, (pid, part), -neg_ks))
    return tuple(labels)


def classify_keypoint(det: Detection, matched_gt: GtInstance, gts_in_image: Sequence[GtInstance],
                      i: int, schema: KeypointSchema,
                      config: Optional[EvalConfig] = None) -> KeypointErrorLabel:
    return classify_detection(det, matched_gt, gts_in_image, schema, config)[i]


def _classify_image(item, schema, config):
    ms, dets, gts = item
    det_by_id = {d.id: d for d in dets}
    gt_by_id = {g.id: g for g in gts}
    out = []
    for d, g, _ in ms.pairs:
        labels = classify_detection(det_by_id[d], gt_by_id[g], gts, schema, config)
        out.append(DetectionLabels(d, g, ms.image_id, labels))
    return out


def classify_all(match_sets: Sequence[MatchSet], dets: Sequence[Detection],
                 gts: Sequence[GtInstance], schema: KeypointSchema,
                 config: Optional[EvalConfig] = None, workers=1) -> dict[int, DetectionLabels]:
    """Labels for every matched detection, keyed by detection id."""
    config = config or EvalConfig()
    by_det = group_by_image(dets)
    by_gt = group_by_image(gts)
    items = [(ms, by_det.get(ms.image_id, []), by_gt.get(ms.image_id, []))
             for ms in match_sets if ms.pairs]
    out = {}
    for chunk in pmap(partial(_classify_image, schema=schema, config=config), items, workers):
        for dl in chunk:
            out[dl.detection_id] = dl
    return out


@dataclass
class ErrorBreakdown:
    """Counts of each error kind per keypoint type, per body group and overall."""

    keypoint_names: tuple[str, ...]
    per_keypoint: dict[str, Counter]
    per_group: dict[str, Counter]
    overall: Counter

    @staticmethod
    def _freq(counter: Counter) -> dict[str, float]:
        total = sum(counter[k] for k in CLASSIFIABLE)
        return {k.value: (counter[k] / total if total else 0.0) for k in CLASSIFIABLE}

    @property
    def overall_fractions(self) -> dict[str, float]:
        return self._freq(self.overall)

    @property
    def empty(self) -> bool:
        return sum(self.overall[k] for k in CLASSIFIABLE) == 0

    def rows(self) -> list[dict]:
        """Flat table rows: one per keypoint type, one per group, one overall."""
        out = []
        for scope, table in (("keypoint", self.per_keypoint), ("group", self.per_group),
                             ("overall", {"all": self.overall})):
            for name, counter in table.items():
                total = sum(counter[k] for k in CLASSIFIABLE)
                if not total and scope != "overall":
                    continue
                row = {"scope": scope, "name": name, "total": total}
                freq = self._freq(counter)
                for k in CLASSIFIABLE:
                    row[f"{k.value}_count"] = counter[k]
                    row[f"{k.value}_frac"] = freq[k.value]
                out.append(row)
        return out

    def to_dict(self) -> dict:
        def counts(c):
            return {k.value: c[k] for k in CLASSIFIABLE}
        return {
            "overall": {"counts": counts(self.overall), "fractions": self.overall_fractions},
            "per_keypoint": {n: counts(c) for n, c in self.per_keypoint.items()},
            "per_group": {n: counts(c) for n, c in self.per_group.items()},
        }


def error_breakdown(labeled: Mapping[int, DetectionLabels] | Sequence[DetectionLabels],
                    schema: KeypointSchema) -> ErrorBreakdown:
    items = labeled.values() if isinstance(labeled, Mapping) else labeled
    per_kp = {n: Counter() for n in schema.names}
    for dl in items:
        for name, lab in zip(schema.names, dl.labels):
            if lab.kind is not ErrorKind.UNCLASSIFIABLE:
                per_kp[name][lab.kind] += 1
    per_group = {}
    for g, idx in schema.groups.items():
        c = Counter()
        for i in idx:
            c.update(per_kp[schema.names[i]])
        per_group[g] = c
    overall = Counter()
    for c in per_kp.values():
        overall.update(c)
    return ErrorBreakdown(tuple(schema.names), per_kp, per_group, overall)


def error_frequencies(labeled: Sequence[DetectionLabels]) -> dict[str, float]:
    """Overall fraction of each kind among classifiable keypoints."""
    c = Counter(lab.kind for dl in labeled for lab in dl.labels
                if lab.kind is not ErrorKind.UNCLASSIFIABLE)
    return ErrorBreakdown._freq(c)
