"""Full diagnosis pipeline: one lazily computed context, JSON/CSV/SVG writers."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import background as bg
from . import benchmarks as bm
from . import plots
from .correction import CorrectionPlan, progressive_pr, separate_impact
from .data_model import (Detection, EmptyEvaluationError, EvalConfig, GtInstance, ImageRecord,
                         KeypointSchema, write_json)
from .matching import coco_ap, coco_ar, evaluate, match_all
from .scoring import rescore_report, score_histograms
from .taxonomy import classify_all, error_breakdown

SCHEMA_VERSION = 1


def clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


@dataclass
class Analysis:
    """Inputs plus every derived quantity, computed on first use."""

    images: list[ImageRecord]
    gts: list[GtInstance]
    dets: list[Detection]
    schema: KeypointSchema
    config: EvalConfig = field(default_factory=EvalConfig)
    plan: CorrectionPlan = field(default_factory=CorrectionPlan)
    bench_spec: bm.BenchmarkSpec = field(default_factory=bm.BenchmarkSpec)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not any(not g.excluded for g in self.gts):
            raise EmptyEvaluationError("no ground truth to evaluate")
        self.plan.check(self.config)

    @cached_property
    def match_sets(self):
        return match_all(self.dets, self.gts, self.schema, self.config, workers=self.workers,
                         image_ids=[im.id for im in self.images])

    @cached_property
    def results(self):
        return evaluate(self.match_sets, self.config)

    @cached_property
    def labels(self):
        return classify_all(self.match_sets, self.dets, self.gts, self.schema, self.config,
                            workers=self.workers)

    @cached_property
    def breakdown(self):
        return error_breakdown(self.labels, self.schema)

    @cached_property
    def impact(self):
        return separate_impact(self.dets, self.gts, self.schema, self.config,
                               labels=self.labels, match_sets=self.match_sets, workers=self.workers)

    @cached_property
    def progressive(self):
        return progressive_pr(self.dets, self.gts, self.plan, self.schema, self.config,
                              labels=self.labels, match_sets=self.match_sets, workers=self.workers)

    @cached_property
    def rescore(self):
        return rescore_report(self.dets, self.gts, self.schema, self.config, workers=self.workers,
                              match_sets=self.match_sets)

    @cached_property
    def histograms(self):
        return score_histograms(self.dets, self.gts, self.schema, self.config)

    @cached_property
    def background(self):
        return bg.background_impact(self.match_sets, self.config)

    @cached_property
    def fp_areas(self):
        return bg.high_conf_fp_histogram(self.dets, self.match_sets, self.config)

    @cached_property
    def heatmap(self):
        return bg.fn_heatmap(self.gts, self.match_sets, self.images, config=self.config)

    @cached_property
    def clutter(self):
        return bg.clutter_stats(self.match_sets, config=self.config)

    @cached_property
    def cells(self):
        return bm.partition(self.gts, self.bench_spec)

    @cached_property
    def bench(self):
        return bm.benchmark_all(self.match_sets, self.cells, self.config, self.labels)

    # -- summary sections

    def ap_section(self) -> dict:
        return {f"{t:g}": r.to_dict() for t, r in self.results.items()}

    def rescore_section(self) -> dict:
        return {**self.rescore.to_dict(), "histograms": self.histograms.to_dict()}

    def background_section(self) -> dict:
        return {
            "impact": [b.to_dict() for b in self.background],
            "high_conf_fp_area": self.fp_areas.to_dict(),
            "fn_heatmap": {"grid": list(self.heatmap.counts.shape),
                           "total": int(self.heatmap.counts.sum()),
                           "skipped_gts": self.heatmap.skipped},
            "clutter": self.clutter.to_dict(),
        }

    def benchmarks_section(self) -> dict:
        overall = coco_ap(self.match_sets, self.config)
        cells = {}
        for name, res in self.bench.items():
            d = res.to_dict()
            d["coco_ap"] = None if res.empty else float(np.mean([r.ap for r in res.results.values()]))
            cells[name] = d
        si = {}
        for family, prefix in (("occlusion_crowding", "vis"), ("size", "size:")):
            vals = [c["coco_ap"] for n, c in cells.items() if n.startswith(prefix) and c["coco_ap"] is not None]
            if vals:
                s, i = bm.sensitivity_impact(vals, overall)
                si[family] = {"sensitivity": s, "impact": i}
            else:
                si[family] = {"sensitivity": None, "impact": None}
        return {"overall_coco_ap": overall, "cells": cells, "sensitivity_impact": si}

    def summary(self) -> dict:
        return clean({
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "counts": {"images": len(self.images), "ground_truth": len(self.gts),
                       "detections": len(self.dets)},
            "ap": self.ap_section(),
            "coco_ap": coco_ap(self.match_sets, self.config),
            "coco_ar": coco_ar(self.match_sets, self.config),
            "error_breakdown": self.breakdown.to_dict(),
            "separate_impact": {k.value: v.to_dict() for k, v in self.impact.items()},
            "progressive": self.progressive.to_dict(),
            "rescore": self.rescore_section(),
            "background": self.background_section(),
            "benchmarks": self.benchmarks_section(),
        })

    # -- tables

    def tables(self) -> dict[str, list[dict]]:
        out = {
            "ap": [r.to_dict() for r in self.results.values()],
            "pr_curves": [{"threshold": t, "recall": rc, "precision": p}
                          for t, r in self.results.items() for rc, p in r.pr_samples],
            "error_breakdown": self.breakdown.rows(),
            "separate_impact": [
                {"kind": k.value, "count": v.count, "oks_delta_q1": v.oks_delta_q1,
                 "oks_delta_median": v.oks_delta_median, "oks_delta_q3": v.oks_delta_q3,
                 **{f"ap_delta_{t:g}": d for t, d in v.ap_delta.items()}}
                for k, v in self.impact.items()],
            "progressive": [{"stage": s.name, "ap": s.ap} for s in self.progressive.stages],
            "rescore": [self.rescore.to_dict()],
            "score_histograms": self.histograms.rows(),
            "background_impact": [b.to_dict() for b in self.background],
            "fp_area_histogram": self.fp_areas.rows(),
            "benchmarks": [
                {"cell": n, "num_gts": r.num_gts,
                 **{f"ap_{t:g}": r.ap(t) for t in self.config.oks_thresholds}}
                for n, r in self.bench.items()],
        }
        return out

    # -- figures

    def figures(self) -> dict:
        spec = self.bench_spec
        figs = {
            "progressive_pr": plots.progressive_pr(self.progressive, self.config.recall_grid),
            "error_pie": plots.error_pie(self.breakdown),
            "per_part_errors": plots.per_part_bars(self.breakdown),
            "score_histograms": plots.score_histograms(self.histograms),
            "fp_area_histogram": plots.fp_area_histogram(self.fp_areas),
            "fn_heatmap": plots.fn_heatmap(self.heatmap),
        }
        for t in sorted({self.config.oks_thresholds[0], self.plan.threshold}):
            figs[f"benchmarks_ap_{t:g}"] = plots.benchmark_grid(
                bm.cell_matrix(self.bench, spec, t),
                [b.name for b in spec.visibility_bins], [b.name for b in spec.overlap_bins],
                title=f"AP at OKS {t:g}")
        return figs

    def digest(self) -> str:
        lines = [f"images {len(self.images)}  ground truth {len(self.gts)}  detections {len(self.dets)}",
                 f"cocoAP {coco_ap(self.match_sets, self.config):.4f}  "
                 f"cocoAR {coco_ar(self.match_sets, self.config):.4f}", ""]
        lines.append(format_ap_table(self.results))
        lines.append("")
        lines.append("keypoint errors: " + "  ".join(
            f"{k} {v:.3f}" for k, v in self.breakdown.overall_fractions.items()))
        lines.append(f"progressive PR at OKS {self.progressive.threshold:g}:")
        for s in self.progressive.stages:
            lines.append(f"  {s.name:<10} {'n/a' if s.ap is None else f'{s.ap:.4f}'}")
        r = self.rescore
        lines.append(f"rescoring: {r.images_with_optimal_order}/{r.images_with_detections} images "
                     f"already in optimal order, match change {r.match_increase:+d}, "
                     f"{r.matches_with_oks_improvement} matches improved")
        for b in self.background:
            lines.append(f"background @{b.threshold:g}: AP {b.ap_baseline:.4f}  "
                         f"no FN {b.ap_without_fn:.4f}  no FP {b.ap_without_fp:.4f}")
        return "\n".join(lines) + "\n"


def format_ap_table(results) -> str:
    rows = ["OKS    AP      AR      TP     FP     FN"]
    for t, r in results.items():
        rows.append(f"{t:<6g} {r.ap:.4f}  {r.ar_at_k:.4f}  {r.tp:<6d} {r.fp:<6d} {r.fn:<6d}")
    return "\n".join(rows)


def write_csv(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields: list[str] = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(v) for k, v in r.items()})
    path.write_text(buf.getvalue(), encoding="utf-8")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return v


def write_report(analysis: Analysis, out_dir, fmt: str = "both") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt in ("json", "both"):
        write_json(out / "summary.json", analysis.summary())
    if fmt in ("csv", "both"):
        for name, rows in analysis.tables().items():
            write_csv(out / "tables" / f"{name}.csv", rows)
    plots.emit(analysis.figures(), out / "plots")
    (out / "digest.txt").write_text(analysis.digest(), encoding="utf-8")
    return out
