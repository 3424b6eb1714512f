"""Occlusion, crowding and size benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Optional, Sequence

import numpy as np

from .data_model import EmptyEvaluationError, EvalConfig, GtInstance, ValidationError, group_by_image
from .matching import EvalResult, MatchSet, pr_and_ap
from .taxonomy import DetectionLabels, error_frequencies

INF = math.inf


@dataclass(frozen=True)
class Bin:
    """Half-open range ``[lo, hi)`` with a display name."""

    name: str
    lo: float
    hi: float

    def __contains__(self, value) -> bool:
        return self.lo <= value < self.hi


def _check_bins(bins: Sequence[Bin], what: str):
    ordered = sorted(bins, key=lambda b: b.lo)
    for b in ordered:
        if not b.lo < b.hi:
            raise ValidationError(f"{what} bin {b.name!r} is empty")
    for a, b in zip(ordered, ordered[1:]):
        if b.lo < a.hi:
            raise ValidationError(f"{what} bins {a.name!r} and {b.name!r} overlap")
    if len({b.name for b in bins}) != len(bins):
        raise ValidationError(f"{what} bin names must be unique")


@dataclass(frozen=True)
class BenchmarkSpec:
    # visible keypoint counts; integer ranges written as [lo, hi + 1)
    visibility_bins: tuple[Bin, ...] = (
        Bin("1-5", 1, 6), Bin("6-10", 6, 11), Bin("11-15", 11, 16), Bin("16-17", 16, 18))
    overlap_bins: tuple[Bin, ...] = (Bin("0", 0, 1), Bin("1-2", 1, 3), Bin(">=3", 3, INF))
    size_bins: tuple[Bin, ...] = (
        Bin("medium", 32**2, 64**2), Bin("large", 64**2, 96**2),
        Bin("xlarge", 96**2, 128**2), Bin("xxlarge", 128**2, INF))
    iou_threshold: float = 0.1

    def __post_init__(self):
        _check_bins(self.visibility_bins, "visibility")
        _check_bins(self.overlap_bins, "overlap")
        _check_bins(self.size_bins, "size")
        if not 0 < self.iou_threshold <= 1:
            raise ValidationError("iou_threshold must be in (0, 1]")

    def cell_ids(self) -> list[str]:
        return ([f"vis{v.name}|ovl{o.name}" for v in self.visibility_bins for o in self.overlap_bins]
                + [f"size:{s.name}" for s in self.size_bins])


def bbox_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def overlap_count(gt: GtInstance, gts_in_image: Sequence[GtInstance], iou_threshold: float = 0.1) -> int:
    """Other non-excluded people in the image whose box IoU with ``gt`` reaches the threshold."""
    return sum(1 for o in gts_in_image
               if o.id != gt.id and not o.excluded and bbox_iou(gt.bbox, o.bbox) >= iou_threshold)


def _find(bins, value):
    for b in bins:
        if value in b:
            return b
    return None


def partition(gts: Sequence[GtInstance], spec: Optional[BenchmarkSpec] = None) -> dict[str, list[int]]:
    """Assign every non-excluded ground truth to one occlusion/crowding cell and one size cell.

    Instances smaller than the smallest size bin stay out of the size cells.
    """
    spec = spec or BenchmarkSpec()
    cells = {c: [] for c in spec.cell_ids()}
    for image_gts in group_by_image(gts).values():
        for g in sorted(image_gts, key=lambda g: g.id):
            if g.excluded:
                continue
            v = _find(spec.visibility_bins, g.num_visible)
            o = _find(spec.overlap_bins, overlap_count(g, image_gts, spec.iou_threshold))
            if v is None or o is None:
                raise ValidationError(f"ground truth {g.id} falls outside the benchmark bins")
            cells[f"vis{v.name}|ovl{o.name}"].append(g.id)
            s = _find(spec.size_bins, g.area)
            if s is not None:
                cells[f"size:{s.name}"].append(g.id)
    return {c: sorted(ids) for c, ids in cells.items()}


@dataclass
class BenchmarkResult:
    cell: str
    num_gts: int
    results: dict[float, EvalResult] = field(default_factory=dict)
    error_frequencies: dict[str, float] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.num_gts == 0

    def ap(self, t: float) -> Optional[float]:
        r = self.results.get(t)
        return None if r is None else r.ap

    def to_dict(self) -> dict:
        return {
            "cell": self.cell,
            "num_gts": self.num_gts,
            "empty": self.empty,
            "ap": {f"{t:g}": r.ap for t, r in self.results.items()},
            "error_frequencies": self.error_frequencies,
        }


def benchmark_eval(match_sets: Sequence[MatchSet], cell_gts, config: Optional[EvalConfig] = None,
                   labels: Optional[Mapping[int, DetectionLabels]] = None,
                   thresholds=None, name: str = "") -> BenchmarkResult:
    """Evaluate only the ground truths of one cell.

    Other ground truths are ignored: detections matched to them leave the
    ledger and they never count as misses.
    """
    config = config or EvalConfig()
    cell_gts = frozenset(cell_gts)
    out = BenchmarkResult(name, len(cell_gts))
    if not cell_gts:
        return out
    for t in thresholds or config.oks_thresholds:
        try:
            out.results[t] = pr_and_ap(match_sets, t, config, gt_ids=cell_gts)
        except EmptyEvaluationError:
            out.num_gts = 0
            return out
    if labels is not None:
        out.error_frequencies = error_frequencies(
            [dl for dl in labels.values() if dl.gt_id in cell_gts])
    return out


def benchmark_all(match_sets, cells: Mapping[str, Sequence[int]], config=None, labels=None,
                  thresholds=None) -> dict[str, BenchmarkResult]:
    return {c: benchmark_eval(match_sets, ids, config, labels, thresholds, name=c)
            for c, ids in cells.items()}


def sensitivity_impact(values: Sequence[float], overall: float) -> tuple[float, float]:
    """Spread across cells (max - min) and headroom of the best cell (max - overall).

    Computed in decimal on the shortest repr of each input so that values
    written with few digits give exact results.
    """
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        raise ValueError("sensitivity_impact needs at least one value")
    dec = [Decimal(repr(float(v))) for v in vals]
    hi, lo = max(dec), min(dec)
    return float(hi - lo), float(hi - Decimal(repr(float(overall))))


def cell_matrix(results: Mapping[str, BenchmarkResult], spec: BenchmarkSpec, t: float) -> np.ndarray:
    """Visibility x overlap AP grid at threshold ``t``; NaN for empty cells."""
    m = np.full((len(spec.visibility_bins), len(spec.overlap_bins)), np.nan)
    for i, v in enumerate(spec.visibility_bins):
        for j, o in enumerate(spec.overlap_bins):
            r = results.get(f"vis{v.name}|ovl{o.name}")
            if r is not None and not r.empty:
                m[i, j] = r.ap(t)
    return m
