"""Command-line entry point wiring the survey workflow end to end:
plan -> ingest -> eval / sweep -> census -> serve -> report.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error. Every
output artifact embeds its schema version and the generating configuration
so identical inputs reproduce identical files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import census as census_mod
from . import datastore, evaluation, geometry, planner, reports, synth
from .errors import ValidationError

DEFAULT_IOU = 0.10
DEFAULT_COVERAGE = 0.10
DEFAULT_MIN_TRANSECT = 760.0
DEFAULT_ALTITUDE = 45.0
DEFAULT_SPEED = 6.5
DEFAULT_DEDUP_RADIUS = 20.0
DEFAULT_TIME_WINDOW = 3 * 3600.0
DEFAULT_SERVE_TAU = 0.26

STORE_ENV = "WILDCENSUS_STORE"


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (validation) on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _load_cameras(path: str | None) -> dict[str, geometry.CameraIntrinsics]:
    cameras = geometry.builtin_cameras()
    if path:
        cameras.update(geometry.load_cameras(path))
    return cameras


def _grid_arg(text: str) -> planner.GridSpec:
    try:
        ns, ew = text.lower().split("x")
        return planner.GridSpec(cell_ns_m=float(ns), cell_ew_m=float(ew))
    except (ValueError, ValidationError) as exc:
        raise ValidationError(f"bad --grid {text!r} (expected NSxEW, e.g. 1500x100): {exc}")


def _point_arg(text: str) -> tuple[float, float]:
    try:
        x, y = text.split(",")
        return float(x), float(y)
    except ValueError as exc:
        raise ValidationError(f"bad point {text!r} (expected E,N meters): {exc}")


def _load_dataset(args, need_labels=False, need_detections=False):
    images = datastore.load_manifest(args.manifest)
    cameras = _load_cameras(getattr(args, "cameras", None))
    sizes = datastore.image_sizes(images, cameras)
    labels = dets = None
    if getattr(args, "labels", None):
        labels = datastore.load_labels(args.labels, images, sizes)
    elif need_labels:
        raise ValidationError("--labels is required")
    if getattr(args, "detections", None):
        dets = datastore.load_detections(args.detections, images, sizes)
    elif need_detections:
        raise ValidationError("--detections is required")
    return images, cameras, sizes, labels, dets


def cmd_plan(args) -> int:
    doc = json.loads(Path(args.area).read_text(encoding="utf-8"))
    ring, origin = planner.load_study_area(doc)
    cameras = _load_cameras(args.cameras)
    if args.camera not in cameras:
        raise ValidationError(f"unknown camera {args.camera!r}")
    swath = geometry.ground_swath(cameras[args.camera], args.altitude)
    config = {
        "command": "plan", "area": str(args.area), "coverage": args.coverage,
        "grid": [args.grid.cell_ns_m, args.grid.cell_ew_m],
        "min_transect_m": args.min_transect, "seed": args.seed,
        "altitude_m": args.altitude, "camera": args.camera,
        "speed_mps": args.speed, "max_route_m": args.max_route,
        "home": list(args.home),
    }
    plan = planner.plan_survey(
        study_area=ring, origin=origin, grid=args.grid, swath_m=swath,
        coverage_target=args.coverage, min_transect_m=args.min_transect,
        seed=args.seed, max_route_length_m=args.max_route, home=args.home,
        speed_mps=args.speed, config=config)
    violations = planner.validate_schedule(plan)
    doc = plan.to_dict()
    doc["schedule_violations"] = [
        {"kind": v.kind, "message": v.message} for v in violations]
    Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")
    print(f"plan: {len(plan.transects)} transects, {len(plan.routes)} routes, "
          f"coverage {plan.achieved_coverage:.4f} -> {args.out}")
    for v in violations:
        print(f"schedule violation ({v.kind}): {v.message}")
    return 0


def cmd_ingest(args) -> int:
    images, cameras, sizes, labels, dets = _load_dataset(args)
    summary = {
        "schema": "wildcensus-ingest/1",
        "images": len(images),
        "transects": len({r.transect_id for r in images}),
        "census_eligible": sum(1 for r in images if r.census_eligible),
    }
    if labels is not None:
        by_class = datastore.images_by_class(labels)
        summary["labels"] = len(labels)
        summary["label_images_by_class"] = {c: len(v) for c, v in by_class.items()}
    if dets is not None:
        summary["detections"] = len(dets)
    if args.out:
        Path(args.out).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n",
                                  encoding="utf-8")
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _sweep_grid(step: float) -> list[float]:
    n = round(1.0 / step)
    return [i / n for i in range(n + 1)]


def cmd_eval(args) -> int:
    images, cameras, sizes, labels, dets = _load_dataset(
        args, need_labels=True, need_detections=True)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluation.evaluate(
        dets, labels, [r.image_id for r in images],
        iou_threshold=args.iou, grid=_sweep_grid(args.grid_step),
        operating_confidence=args.tau, threads=args.threads)
    config = {
        "command": "eval", "iou": args.iou, "tau": args.tau,
        "grid_step": args.grid_step, "manifest": str(args.manifest),
        "detections": str(args.detections), "labels": str(args.labels),
    }
    reports.write_report_json(out / "report.json", report, config)
    for cls, points in report.pr_points.items():
        reports.write_pr_csv(out / f"pr_curve_{cls}.csv", points)
    reports.write_sweep_csv(out / "sweep.csv", report.sweep.profile)
    reports.write_confusion_csv(out / "confusion.csv", report.count_confusion)
    print(f"eval: AP({', '.join(f'{c}={v:.4f}' for c, v in report.per_class_ap.items())}) "
          f"mean {report.ap:.4f} at tau {report.operating_confidence:.3f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    images, cameras, sizes, labels, dets = _load_dataset(
        args, need_labels=True, need_detections=True)
    result = evaluation.sweep_confidence(
        dets, labels, iou_threshold=args.iou, grid=_sweep_grid(args.grid_step),
        threads=args.threads)
    reports.write_sweep_csv(args.out, result.profile)
    print(f"sweep: optimum {result.optimal_confidence:.3f} over "
          f"{len(result.profile)} thresholds -> {args.out}")
    return 0


def cmd_census(args) -> int:
    images, cameras, sizes, labels, dets = _load_dataset(args)
    plan = planner.SurveyPlan.from_dict(
        json.loads(Path(args.plan).read_text(encoding="utf-8")))
    verdicts = synth.load_verdicts(args.verdicts)
    report = census_mod.run_census(
        verdicts, images, cameras, plan, cls=args.census_class,
        dedup_radius_m=args.radius, time_window_s=args.window,
        iou_threshold=args.iou)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["config"] = {
        "command": "census", "manifest": str(args.manifest),
        "verdicts": str(args.verdicts), "plan": str(args.plan),
        "radius_m": args.radius, "window_s": args.window, "iou": args.iou,
    }
    (out / "census.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    census_mod.write_conflicts(out / "conflicts.jsonl", report.conflicts)
    est = report.estimate
    print(f"census: {est.unique_count} unique individuals, "
          f"{est.density_per_km2:.3f}/km2 over {est.surveyed_area_m2 / 1e6:.3f} km2, "
          f"abundance {est.abundance:.1f} -> {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .review import ReviewService
    from .server import create_app

    store = args.store or os.environ.get(STORE_ENV)
    if not store:
        raise ValidationError(f"--store or ${STORE_ENV} is required")
    images = datastore.load_manifest(args.manifest) if args.manifest else []
    service = ReviewService(images=images, store_dir=store,
                            lease_ttl_s=args.lease_ttl)
    if args.manifest and not service.events:
        dets = []
        if args.detections:
            cameras = _load_cameras(args.cameras)
            sizes = datastore.image_sizes(images, cameras)
            dets = datastore.load_detections(args.detections, images, sizes)
        service.seed_tasks([r.image_id for r in images], dets, args.tau)
        print(f"seeded {len(images)} tasks "
              f"({sum(1 for d in dets if d.confidence >= args.tau)} candidates)")
    app = create_app(service, image_root=args.image_root or Path(store))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_report(args) -> int:
    doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profile = [tuple(p) for p in doc.get("sweep", [])]
    if profile:
        reports.write_sweep_svg(out / "sweep.svg", profile)
    matrix = doc.get("count_confusion")
    if matrix:
        reports.write_confusion_svg(out / "confusion.svg", matrix)
    made = []
    for csv_name, svg_name in (("pr_curve_deer.csv", "pr_curve_deer.svg"),):
        csv_path = Path(args.report).parent / csv_name
        if csv_path.exists():
            points = []
            for line in csv_path.read_text().splitlines()[1:]:
                conf, rec, prec = (float(v) for v in line.split(","))
                points.append(evaluation.PRPoint(conf, rec, prec))
            reports.write_pr_svg(out / svg_name, points)
            made.append(svg_name)
    print(f"report: wrote {', '.join(['sweep.svg', 'confusion.svg'] + made)} -> {out}")
    return 0


def cmd_synth(args) -> int:
    spec = synth.load_scenario(args.spec) if args.spec else synth.ScenarioSpec()
    if args.seed is not None:
        spec = synth.ScenarioSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    survey = synth.generate(spec)
    survey.write(args.out, write_images=args.write_images)
    print(f"synth: {len(survey.images)} images, {survey.true_count} deer, "
          f"{len(survey.labels)} labels, {len(survey.detections)} detections "
          f"-> {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="wildcensus",
                     description="UAV strip-transect wildlife census toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("plan", parents=[], help="generate a survey plan")
    p.add_argument("--area", required=True, help="GeoJSON polygon (WGS84 lon/lat)")
    p.add_argument("--coverage", type=float, default=DEFAULT_COVERAGE)
    p.add_argument("--grid", type=_grid_arg, default=planner.GridSpec(),
                   help="grid cells NSxEW in meters (default 1500x100)")
    p.add_argument("--min-transect", type=float, default=DEFAULT_MIN_TRANSECT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--altitude", type=float, default=DEFAULT_ALTITUDE)
    p.add_argument("--camera", default="phantom4pro")
    p.add_argument("--cameras", help="camera intrinsics config file")
    p.add_argument("--speed", type=float, default=DEFAULT_SPEED)
    p.add_argument("--max-route", type=float, default=20_000.0)
    p.add_argument("--home", type=_point_arg, default=(0.0, 0.0))
    p.add_argument("--out", default="plan.json")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("ingest", help="validate data files and report counts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections")
    p.add_argument("--labels")
    p.add_argument("--cameras")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("eval", help="detection metrics and report files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--cameras")
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--tau", type=float, default=None,
                   help="operating confidence (default: sweep optimum)")
    p.add_argument("--grid-step", type=float, default=0.005)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", default="eval_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="AP profile over confidence thresholds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--cameras")
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--grid-step", type=float, default=0.005)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("census", help="reconcile, dedup and estimate density")
    p.add_argument("--manifest", required=True)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--cameras")
    p.add_argument("--census-class", default="deer")
    p.add_argument("--radius", type=float, default=DEFAULT_DEDUP_RADIUS,
                   help="dedup radius in meters")
    p.add_argument("--window", type=float, default=DEFAULT_TIME_WINDOW,
                   help="dedup time window in seconds")
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--out-dir", default="census_out")
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--store", help=f"event-log directory (default ${STORE_ENV})")
    p.add_argument("--lease-ttl", type=float, default=900.0)
    p.add_argument("--manifest", help="seed tasks from this manifest on first run")
    p.add_argument("--detections", help="model candidates for assisted review")
    p.add_argument("--cameras")
    p.add_argument("--tau", type=float, default=DEFAULT_SERVE_TAU,
                   help="candidate confidence floor")
    p.add_argument("--image-root", help="directory for relative image paths")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="render SVG charts from eval outputs")
    p.add_argument("--report", required=True, help="report.json from eval")
    p.add_argument("--out-dir", default="report_out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic survey corpus")
    p.add_argument("--spec", help="scenario JSON (defaults used if omitted)")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--out", required=True)
    p.add_argument("--write-images", action="store_true",
                   help="also write flat placeholder images")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON input: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
