"""Scoring errors, the optimal-score oracle and keypoint soft-NMS."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .data_model import Detection, EvalConfig, GtInstance, KeypointSchema, group_by_image
from .matching import classify_at_threshold, match_all
from .similarity import keypoint_bbox_area, oks_matrix


@dataclass(frozen=True)
class ScoringError:
    image_id: int
    gt_id: int
    det_hi: int  # higher score, lower OKS
    det_lo: int


def _image_tables(dets, gts, schema):
    """Per image: detections (input order), non-excluded gts by id, OKS matrix."""
    by_det = group_by_image(dets)
    by_gt = group_by_image(gts)
    for image_id in sorted(set(by_det) | set(by_gt)):
        ds = by_det.get(image_id, [])
        gs = sorted((g for g in by_gt.get(image_id, []) if not g.excluded), key=lambda g: g.id)
        yield image_id, ds, gs, oks_matrix(ds, gs, schema)


def find_scoring_errors(dets: Sequence[Detection], gts: Sequence[GtInstance],
                        schema: KeypointSchema,
                        config: Optional[EvalConfig] = None) -> list[ScoringError]:
    """Pairs of detections near one ground truth whose score order contradicts OKS.

    A detection is near a ground truth when their OKS reaches
    ``config.proximity_threshold``.
    """
    config = config or EvalConfig()
    out = []
    for image_id, ds, gs, M in _image_tables(dets, gts, schema):
        for j, g in enumerate(gs):
            near = [(ds[r], M[r, j]) for r in range(len(ds)) if M[r, j] >= config.proximity_threshold]
            near.sort(key=lambda x: x[0].id)
            for a, oa in near:
                for b, ob in near:
                    if a.score > b.score and oa < ob:
                        out.append(ScoringError(image_id, g.id, a.id, b.id))
    return out


def optimal_rescore(dets: Sequence[Detection], gts: Sequence[GtInstance],
                    schema: KeypointSchema) -> list[Detection]:
    """Replace each score by the detection's best OKS with any ground truth in its image."""
    best = {}
    for _, ds, gs, M in _image_tables(dets, gts, schema):
        for r, d in enumerate(ds):
            best[d.id] = float(M[r].max()) if gs else 0.0
    return [d.replace(score=best[d.id]) for d in dets]


def _soft_nms_image(ds: list[Detection], schema, sigma):
    scores = np.array([d.score for d in ds], dtype=float)
    ids = np.array([d.id for d in ds])
    alive = np.ones(len(ds), dtype=bool)
    k2 = np.asarray(schema.k_constants, dtype=float) ** 2
    xy = np.stack([d.xy for d in ds]) if ds else np.zeros((0, schema.num_keypoints, 2))
    degenerate = []
    while alive.any():
        cand = np.flatnonzero(alive)
        # highest current score, ties to the lowest id
        top = cand[np.lexsort((ids[cand], -scores[cand]))[0]]
        alive[top] = False
        rest = np.flatnonzero(alive)
        if not len(rest):
            break
        area = keypoint_bbox_area(xy[top])
        if not area > 0:
            degenerate.append(int(ids[top]))
            continue
        d = xy[rest] - xy[top][None]
        o = np.mean(np.exp(-np.sum(d * d, axis=-1) / (2.0 * area * k2[None])), axis=1)
        scores[rest] = scores[rest] * np.exp(-(o * o) / sigma)
    return scores, degenerate


def soft_nms(dets: Sequence[Detection], schema: KeypointSchema, sigma: float = 0.5) -> list[Detection]:
    """Gaussian soft-NMS where the overlap between detections is their OKS.

    The kept detection acts as ground truth with every part labeled and scale
    ``sqrt`` of its keypoints' bounding-box area.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    new = {}
    degenerate = []
    for image_id, ds in sorted(group_by_image(dets).items()):
        scores, bad = _soft_nms_image(ds, schema, sigma)
        degenerate.extend(bad)
        new.update({d.id: float(s) for d, s in zip(ds, scores)})
    if degenerate:
        warnings.warn(f"soft-NMS: zero-area keypoint box for detections {sorted(degenerate)}; "
                      "no decay applied from them", RuntimeWarning, stacklevel=2)
    return [d.replace(score=new[d.id]) for d in dets]


def rescore(dets, gts, schema, sigma: float = 0.5) -> list[Detection]:
    """Optimal scores followed by soft-NMS."""
    return soft_nms(optimal_rescore(dets, gts, schema), schema, sigma)


@dataclass
class ScoreHistograms:
    edges: np.ndarray
    original_best: np.ndarray
    original_other: np.ndarray
    optimal_best: np.ndarray
    optimal_other: np.ndarray
    overlap_original: float
    overlap_optimal: float

    def rows(self) -> list[dict]:
        out = []
        for b in range(len(self.edges) - 1):
            out.append({
                "bin_lo": float(self.edges[b]), "bin_hi": float(self.edges[b + 1]),
                "original_best": int(self.original_best[b]),
                "original_other": int(self.original_other[b]),
                "optimal_best": int(self.optimal_best[b]),
                "optimal_other": int(self.optimal_other[b]),
            })
        return out

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "original": {"best": self.original_best.tolist(), "other": self.original_other.tolist()},
            "optimal": {"best": self.optimal_best.tolist(), "other": self.optimal_other.tolist()},
            "overlap_original": self.overlap_original,
            "overlap_optimal": self.overlap_optimal,
        }


def histogram_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Shared mass of two histograms after normalizing each to sum 1."""
    sa, sb = a.sum(), b.sum()
    if sa == 0 or sb == 0:
        return 0.0
    return float(np.minimum(a / sa, b / sb).sum())


def split_best_and_other(dets, gts, schema, config=None):
    """Ids of best-OKS detections per ground truth, and of the other near ones."""
    config = config or EvalConfig()
    best, other = set(), set()
    for _, ds, gs, M in _image_tables(dets, gts, schema):
        if not ds or not gs:
            continue
        ids = np.array([d.id for d in ds])
        for j in range(len(gs)):
            col = M[:, j]
            if col.max() <= 0:
                continue
            top = np.flatnonzero(col == col.max())
            best.add(int(ids[top[np.argmin(ids[top])]]))
        near = M.max(axis=1) >= config.proximity_threshold
        other.update(int(i) for i in ids[near])
    return best, other - best


def score_histograms(dets, gts, schema, config=None, bins: int = 20,
                     rescored: Optional[Sequence[Detection]] = None) -> ScoreHistograms:
    if bins < 2:
        raise ValueError("bins must be >= 2")
    config = config or EvalConfig()
    if rescored is None:
        rescored = optimal_rescore(dets, gts, schema)
    best, other = split_best_and_other(dets, gts, schema, config)
    edges = np.linspace(0.0, 1.0, bins + 1)

    def hist(records, ids):
        vals = np.clip([d.score for d in records if d.id in ids], 0.0, 1.0)
        return np.histogram(vals, bins=edges)[0]

    ob, oo = hist(dets, best), hist(dets, other)
    pb, po = hist(rescored, best), hist(rescored, other)
    return ScoreHistograms(edges, ob, oo, pb, po, histogram_overlap(ob, oo), histogram_overlap(pb, po))


@dataclass
class RescoreReport:
    images_with_detections: int
    images_with_optimal_order: int
    scoring_errors: int
    match_increase: int
    matches_with_oks_improvement: int

    def to_dict(self) -> dict:
        return asdict(self)


def _has_optimal_order(orig: np.ndarray, opt: np.ndarray) -> bool:
    higher = orig[:, None] > orig[None, :]
    worse = opt[:, None] < opt[None, :]
    return not np.any(higher & worse)


def rescore_report(dets, gts, schema, config=None, sigma: float = 0.5, workers=1,
                   match_sets=None) -> RescoreReport:
    """Statistics on what optimal rescoring changes.

    Matches are counted as true positives at the lowest configured threshold;
    improvements are ground truths matched both before and after whose OKS
    went strictly up.
    """
    config = config or EvalConfig()
    t = config.oks_thresholds[0]
    optimal = optimal_rescore(dets, gts, schema)
    opt_score = {d.id: d.score for d in optimal}
    rescored = soft_nms(optimal, schema, sigma)

    by_det = group_by_image(dets)
    n_images = len(by_det)
    n_optimal = 0
    for ds in by_det.values():
        orig = np.array([d.score for d in ds])
        opt = np.array([opt_score[d.id] for d in ds])
        n_optimal += _has_optimal_order(orig, opt)

    before = match_sets if match_sets is not None else match_all(dets, gts, schema, workers=workers)
    after = match_all(rescored, gts, schema, workers=workers)
    k = config.max_detections_per_image

    def tp_count(sets):
        n = 0
        for ms in sets:
            kept = set(ms.order[:k])
            n += sum(1 for d, _, _ in classify_at_threshold(ms, t)[0] if d in kept)
        return n

    old_oks = {g: o for ms in before for _, g, o in ms.pairs}
    improved = sum(1 for ms in after for _, g, o in ms.pairs if g in old_oks and o > old_oks[g])
    return RescoreReport(
        images_with_detections=n_images,
        images_with_optimal_order=n_optimal,
        scoring_errors=len(find_scoring_errors(dets, gts, schema, config)),
        match_increase=tp_count(after) - tp_count(before),
        matches_with_oks_improvement=improved,
    )


__all__ = [
    "ScoringError", "find_scoring_errors", "optimal_rescore", "soft_nms", "rescore",
    "ScoreHistograms", "score_histograms", "histogram_overlap", "split_best_and_other",
    "RescoreReport", "rescore_report",
]
