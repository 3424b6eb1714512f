"""Command-line front end.

Exit codes: 0 success, 1 I/O failure, 2 invalid input or usage, 3 nothing to evaluate.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .correction import CorrectionPlan
from .data_model import (EmptyEvaluationError, EvalConfig, KeypointSchema, ValidationError,
                         default_thresholds, detections_to_list, load_detections,
                         load_ground_truth, load_schema, write_json)
from .fixtures import InjectionSpec, ScoreMode, generate, truth_counts
from .matching import coco_ap, coco_ar
from .parallel import resolve_workers
from .report import Analysis, clean, format_ap_table, write_csv, write_report
from .scoring import rescore

COMMANDS = ("evaluate", "errors", "correct", "rescore", "background", "benchmarks", "fixtures", "report")


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _rates(text: str) -> dict[str, float]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, _, value = item.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad rate {item!r}; expected kind=probability")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kpt-diagnose",
                                description="Keypoint detection evaluation and error diagnosis.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--gt", type=Path, help="ground-truth JSON")
    p.add_argument("--dt", type=Path, help="detections JSON")
    p.add_argument("--schema", type=Path, help="keypoint schema JSON (default: COCO person)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--oks-thresholds", type=_floats, default=default_thresholds())
    p.add_argument("--max-dets", type=int, default=20)
    p.add_argument("--plan", default=",".join(s.value for s in CorrectionPlan().stages),
                   help="comma-separated correction stages")
    p.add_argument("--plan-threshold", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv", "both"), default="both")
    p.add_argument("--parallel", type=int, default=None,
                   help="worker processes (default: $KPT_DIAGNOSE_PARALLEL or 1)")
    g = p.add_argument_group("fixtures")
    g.add_argument("--images", type=int, default=10)
    g.add_argument("--people", type=int, default=3)
    g.add_argument("--rates", type=_rates, default={})
    g.add_argument("--score-mode", choices=[m.value for m in ScoreMode], default="optimal")
    g.add_argument("--background", type=int, default=0, help="background detections per image")
    return p


def _load(args):
    if args.gt is None or args.dt is None:
        raise UsageError(f"{args.command} needs --gt and --dt")
    schema = load_schema(args.schema) if args.schema else KeypointSchema.coco_person()
    config = EvalConfig(oks_thresholds=args.oks_thresholds, max_detections_per_image=args.max_dets)
    plan = CorrectionPlan.parse(args.plan, args.plan_threshold)
    images, gts = load_ground_truth(args.gt, schema)
    dets = load_detections(args.dt, schema)
    return Analysis(images, gts, dets, schema, config, plan, seed=args.seed,
                    workers=resolve_workers(args.parallel))


def _emit(args, payload: dict, tables: dict, name: str) -> None:
    if args.out is None:
        return
    if args.format in ("json", "both"):
        write_json(args.out / f"{name}.json", clean(payload))
    if args.format in ("csv", "both"):
        for tname, rows in tables.items():
            write_csv(args.out / f"{tname}.csv", rows)


def cmd_evaluate(args, a: Analysis):
    print(format_ap_table(a.results))
    print(f"cocoAP {coco_ap(a.match_sets, a.config):.4f}  cocoAR {coco_ar(a.match_sets, a.config):.4f}")
    t = a.tables()
    _emit(args, {"ap": a.ap_section(), "coco_ap": coco_ap(a.match_sets, a.config),
                 "coco_ar": coco_ar(a.match_sets, a.config)},
          {"ap": t["ap"], "pr_curves": t["pr_curves"]}, "evaluate")


def cmd_errors(args, a: Analysis):
    for k, v in a.breakdown.overall_fractions.items():
        print(f"{k:<10} {v:.4f}")
    _emit(args, {"error_breakdown": a.breakdown.to_dict()},
          {"error_breakdown": a.breakdown.rows()}, "errors")


def cmd_correct(args, a: Analysis):
    for s in a.progressive.stages:
        print(f"{s.name:<10} {'n/a' if s.ap is None else f'{s.ap:.4f}'}")
    t = a.tables()
    _emit(args, {"progressive": a.progressive.to_dict(),
                 "separate_impact": {k.value: v.to_dict() for k, v in a.impact.items()}},
          {"progressive": t["progressive"], "separate_impact": t["separate_impact"]}, "correct")


def cmd_rescore(args, a: Analysis):
    for k, v in a.rescore.to_dict().items():
        print(f"{k:<28} {v}")
    _emit(args, {"rescore": a.rescore_section()},
          {"rescore": [a.rescore.to_dict()], "score_histograms": a.histograms.rows()}, "rescore")
    if args.out is not None:
        write_json(args.out / "dt_rescored.json",
                   detections_to_list(rescore(a.dets, a.gts, a.schema)))


def cmd_background(args, a: Analysis):
    for b in a.background:
        print(f"OKS {b.threshold:g}: AP {b.ap_baseline:.4f}  without FN {b.ap_without_fn:.4f}  "
              f"without FP {b.ap_without_fp:.4f}")
    _emit(args, {"background": a.background_section()},
          {"background_impact": [b.to_dict() for b in a.background],
           "fp_area_histogram": a.fp_areas.rows()}, "background")


def cmd_benchmarks(args, a: Analysis):
    t0 = a.config.oks_thresholds[0]
    for name, r in a.bench.items():
        ap = r.ap(t0)
        print(f"{name:<22} n={r.num_gts:<6d} AP@{t0:g} {'n/a' if ap is None else f'{ap:.4f}'}")
    _emit(args, {"benchmarks": a.benchmarks_section(), "partition": a.cells},
          {"benchmarks": a.tables()["benchmarks"]}, "benchmarks")


def cmd_report(args, a: Analysis):
    if args.out is None:
        raise UsageError("report needs --out")
    write_report(a, args.out, args.format)
    print(a.digest(), end="")


def cmd_fixtures(args):
    if args.out is None:
        raise UsageError("fixtures needs --out")
    schema = load_schema(args.schema) if args.schema else KeypointSchema.coco_person()
    spec = InjectionSpec(rates=args.rates, score_mode=args.score_mode, rng_seed=args.seed,
                         background_per_image=args.background)
    fx = generate(args.images, args.people, spec, schema, workers=resolve_workers(args.parallel))
    fx.write(args.out)
    counts = truth_counts(fx)
    print(f"{len(fx.images)} images, {len(fx.gts)} people, {len(fx.dets)} detections")
    print("  ".join(f"{k.value} {counts[k]}" for k in sorted(counts, key=lambda k: k.value)))


HANDLERS = {
    "evaluate": cmd_evaluate, "errors": cmd_errors, "correct": cmd_correct,
    "rescore": cmd_rescore, "background": cmd_background, "benchmarks": cmd_benchmarks,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fixtures":
            cmd_fixtures(args)
        else:
            HANDLERS[args.command](args, _load(args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EmptyEvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
