"""Background false positives and false negatives."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from matplotlib.path import Path as PolyPath

from .data_model import Detection, EvalConfig, GtInstance, ImageRecord
from .matching import MatchSet, classify_at_threshold, pr_and_ap
from .similarity import keypoint_bbox_area

IMPACT_THRESHOLDS = (0.5, 0.75, 0.95)
# upper bounds of the FP area bins; the first bin is everything below 32**2
AREA_EDGES = (0.0, 32.0**2, 64.0**2, 96.0**2, 128.0**2, math.inf)
AREA_LABELS = ("<32^2", "32^2-64^2", "64^2-96^2", "96^2-128^2", ">=128^2")


@dataclass
class BackgroundImpact:
    threshold: float
    ap_baseline: float
    ap_without_fn: float
    ap_without_fp: float

    @property
    def fn_delta(self) -> float:
        return self.ap_without_fn - self.ap_baseline

    @property
    def fp_delta(self) -> float:
        return self.ap_without_fp - self.ap_baseline

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "ap": self.ap_baseline,
                "ap_without_fn": self.ap_without_fn, "ap_without_fp": self.ap_without_fp,
                "fn_delta": self.fn_delta, "fp_delta": self.fp_delta}


def background_impact(match_sets: Sequence[MatchSet], config: Optional[EvalConfig] = None,
                      thresholds=IMPACT_THRESHOLDS) -> list[BackgroundImpact]:
    """AP before and after removing unmatched ground truth / unmatched detections.

    "Unmatched" means left without any pair by the matcher; detections paired
    below the threshold are localization errors and stay in the ledger.
    """
    config = config or EvalConfig()
    fn = {g for ms in match_sets for g in ms.unmatched_gts}
    fp = {d for ms in match_sets for d in ms.unmatched_detections}
    out = []
    for t in thresholds:
        out.append(BackgroundImpact(
            threshold=t,
            ap_baseline=pr_and_ap(match_sets, t, config).ap,
            ap_without_fn=pr_and_ap(match_sets, t, config, drop_gts=fn).ap,
            ap_without_fp=pr_and_ap(match_sets, t, config, drop_detections=fp).ap,
        ))
    return out


def nearest_rank_percentile(values, q: float) -> float:
    """Smallest value with at least ``q`` percent of the data at or below it."""
    vals = np.sort(np.asarray(values, dtype=float))
    if not len(vals):
        return math.nan
    rank = max(1, math.ceil(q / 100.0 * len(vals)))
    return float(vals[rank - 1])


def errors_at(match_sets, t, max_dets):
    """Ids of FP detections and FN ground truths at OKS ``t`` after the per-image cap."""
    fp, fn = set(), set()
    for ms in match_sets:
        kept = set(ms.order[:max_dets])
        tp, fps, fns = classify_at_threshold(ms, t)
        fp.update(d for d in fps if d in kept)
        fn.update(fns)
        fn.update(g for d, g, _ in tp if d not in kept)
    return fp, fn


@dataclass
class AreaHistogram:
    labels: tuple[str, ...]
    edges: tuple[float, ...]
    counts: list[int]
    score_cutoff: float
    detection_ids: list[int]

    def rows(self) -> list[dict]:
        return [{"bin": lab, "lo": lo, "hi": hi, "count": c}
                for lab, lo, hi, c in zip(self.labels, self.edges, self.edges[1:], self.counts)]

    def to_dict(self) -> dict:
        return {"bins": list(self.labels), "counts": list(self.counts),
                "score_cutoff": self.score_cutoff, "n": sum(self.counts)}


def high_conf_fp_histogram(dets: Sequence[Detection], match_sets: Sequence[MatchSet],
                           config: Optional[EvalConfig] = None, t: float = 0.5,
                           percentile: float = 80.0, edges=AREA_EDGES,
                           labels=AREA_LABELS) -> AreaHistogram:
    """Keypoint-box areas of FPs scoring strictly above the ``percentile`` of all scores.

    The cutoff is the nearest-rank percentile, so with 10 distinct scores and
    the default 80 exactly the top two qualify.
    """
    config = config or EvalConfig()
    cutoff = nearest_rank_percentile([d.score for d in dets], percentile)
    fp, _ = errors_at(match_sets, t, config.max_detections_per_image)
    chosen = sorted((d for d in dets if d.id in fp and d.score > cutoff), key=lambda d: d.id)
    counts = [0] * (len(edges) - 1)
    for d in chosen:
        a = keypoint_bbox_area(d.xy)
        b = int(np.searchsorted(edges, a, side="right")) - 1
        counts[min(max(b, 0), len(counts) - 1)] += 1
    return AreaHistogram(tuple(labels), tuple(edges), counts,
                         cutoff, [d.id for d in chosen])


def _rle_to_mask(seg) -> Optional[np.ndarray]:
    counts = seg.get("counts")
    if not isinstance(counts, list):
        return None
    h, w = (int(v) for v in seg["size"])
    flat = np.zeros(h * w, dtype=bool)
    pos, val = 0, False
    for c in counts:
        flat[pos:pos + c] = val
        pos += c
        val = not val
    return flat.reshape((w, h)).T  # column-major


def rasterize_instance(gt: GtInstance, image: ImageRecord, grid=(128, 128)) -> Optional[np.ndarray]:
    """Boolean grid mask of an instance in normalized image coordinates.

    A cell is set when its center lies inside the polygon mask, the RLE mask
    or, failing both, the bounding box. ``None`` when there is no geometry.
    """
    H, W = grid
    cy = (np.arange(H) + 0.5) / H * image.height
    cx = (np.arange(W) + 0.5) / W * image.width
    seg = gt.segmentation
    if isinstance(seg, list) and seg:
        X, Y = np.meshgrid(cx, cy)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        inside = np.zeros(len(pts), dtype=bool)
        for poly in seg:
            if len(poly) >= 6:
                inside |= PolyPath(np.asarray(poly, dtype=float).reshape(-1, 2)).contains_points(pts)
        return inside.reshape(H, W)
    if isinstance(seg, dict):
        mask = _rle_to_mask(seg)
        if mask is not None:
            mh, mw = mask.shape
            ri = np.minimum((cy / image.height * mh).astype(int), mh - 1)
            ci = np.minimum((cx / image.width * mw).astype(int), mw - 1)
            return mask[np.ix_(ri, ci)]
    x, y, w, h = gt.bbox
    if not (w > 0 and h > 0):
        return None
    return ((cy >= y) & (cy <= y + h))[:, None] & ((cx >= x) & (cx <= x + w))[None, :]


@dataclass
class Heatmap:
    counts: np.ndarray
    skipped: list[int]

    @property
    def normalized(self) -> np.ndarray:
        m = self.counts.max()
        return self.counts / m if m > 0 else self.counts.astype(float)


def fn_heatmap(gts: Sequence[GtInstance], match_sets: Sequence[MatchSet],
               images: Mapping[int, ImageRecord] | Sequence[ImageRecord],
               grid=(128, 128), t: float = 0.5, config: Optional[EvalConfig] = None) -> Heatmap:
    """Accumulate the masks of the false negatives at ``t`` on a common grid."""
    config = config or EvalConfig()
    if not isinstance(images, Mapping):
        images = {im.id: im for im in images}
    _, fn = errors_at(match_sets, t, config.max_detections_per_image)
    acc = np.zeros(grid, dtype=np.int64)
    skipped = []
    for g in sorted((g for g in gts if g.id in fn), key=lambda g: g.id):
        image = images.get(g.image_id)
        if image is None:
            raise ValueError(f"image {g.image_id} dimensions unknown")
        m = rasterize_instance(g, image, grid)
        if m is None:
            skipped.append(g.id)
            continue
        acc += m
    if skipped:
        warnings.warn(f"FN heatmap: no mask or box for ground truths {skipped}", RuntimeWarning,
                      stacklevel=2)
    return Heatmap(acc, skipped)


@dataclass
class ClutterStats:
    avg_people_with_fp: Optional[float]
    avg_people_with_fn: Optional[float]
    avg_people: Optional[float]

    def to_dict(self) -> dict:
        return {"avg_people_with_fp": self.avg_people_with_fp,
                "avg_people_with_fn": self.avg_people_with_fn,
                "avg_people": self.avg_people}


def clutter_stats(match_sets: Sequence[MatchSet], t: float = 0.5,
                  config: Optional[EvalConfig] = None) -> ClutterStats:
    """Mean number of people in images with FPs, with FNs, and over all images with people."""
    config = config or EvalConfig()
    k = config.max_detections_per_image
    with_fp, with_fn, everyone = [], [], []
    for ms in match_sets:
        people = len(ms.gt_ids)
        if people:
            everyone.append(people)
        fp, fn = errors_at([ms], t, k)
        if fp:
            with_fp.append(people)
        if fn:
            with_fn.append(people)

    def mean(v):
        return float(np.mean(v)) if v else None

    return ClutterStats(mean(with_fp), mean(with_fn), mean(everyone))
