"""Seeded synthetic surveys for oracle-checkable testing.

A scenario plants K deer inside the flown strips, flies the planned routes
photo by photo, and emits every artifact the real pipeline consumes:
manifest, labels (with masks), detections with a controllable TP/FP
profile, and dual-observer verdicts. Deer in forward-overlap zones appear
in consecutive frames, giving the census dedup real duplicates whose true
count is known by construction.

Placement margins keep every labeled animal (plus observer jitter) fully
inside image bounds, and the minimum deer spacing must clear the dedup
radius plus jitter so ground-truth uniqueness stays well defined.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datastore import (
    Detection,
    GroundTruthLabel,
    ImageRecord,
    write_detections,
    write_jsonl,
    write_labels,
    write_manifest,
)
from .errors import ValidationError
from .geometry import (
    FlightPose,
    GeoPoint,
    builtin_cameras,
    along_track_extent,
    enu_unproject,
    ground_swath,
    ground_to_pixel,
)
from .planner import GridSpec, SurveyPlan, generate_transects, plan_survey, polygon_area
from .review import Verdict, BoxDecision

TRUTH_SCHEMA = "wildcensus-truth/1"
VERDICTS_SCHEMA = "wildcensus-verdicts/1"
SYNTH_EPOCH_UTC = 1_565_092_800.0  # fixed reference epoch for timestamps

DEER_SIZE_M = 2.0  # nominal body length driving bbox size


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    area_width_m: float = 3000.0  # east-west
    area_height_m: float = 3000.0  # north-south
    deer_count: int = 25
    min_spacing_m: float = 60.0
    dedup_radius_m: float = 20.0
    # per-observation box jitter; must stay well under DEER_SIZE_M so
    # same-animal boxes always clear the 0.10 IoU correspondence
    ground_jitter_m: float = 0.5
    altitude_m: float = 45.0
    speed_mps: float = 6.5
    photo_interval_s: float = 5.0
    camera: str = "synth_small"
    grid_cell_ns_m: float = 1500.0
    grid_cell_ew_m: float = 100.0
    min_transect_m: float = 760.0
    # fraction of the achievable strip coverage to select (1.0 = fly all)
    select_fraction: float = 1.0
    max_route_length_m: float = 50_000.0
    tp_rate: float = 1.0
    fp_per_image: float = 0.0
    tp_conf: tuple[float, float] = (0.6, 0.99)
    fp_conf: tuple[float, float] = (0.01, 0.4)
    observer_miss_rate: float = 0.0
    origin_lat: float = -33.9
    origin_lon: float = -58.9

    def __post_init__(self):
        if self.deer_count < 0:
            raise ValidationError("deer_count must be >= 0")
        if self.min_spacing_m <= self.dedup_radius_m + 4.0 * self.ground_jitter_m:
            raise ValidationError(
                f"min deer spacing {self.min_spacing_m} m must exceed the dedup "
                f"radius plus jitter slack "
                f"({self.dedup_radius_m} + 4 x {self.ground_jitter_m} m)")
        if self.dedup_radius_m <= 4.0 * self.ground_jitter_m:
            raise ValidationError(
                "dedup radius must exceed 4 x ground jitter so duplicates of one "
                "animal always link")

    @property
    def origin(self) -> GeoPoint:
        return GeoPoint(lat=self.origin_lat, lon=self.origin_lon)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown scenario fields: {sorted(unknown)}")
        if "tp_conf" in d:
            d = {**d, "tp_conf": tuple(d["tp_conf"])}
        if "fp_conf" in d:
            d = {**d, "fp_conf": tuple(d["fp_conf"])}
        return cls(**d)


@dataclass
class SyntheticSurvey:
    spec: ScenarioSpec
    plan: SurveyPlan
    images: list[ImageRecord]
    labels: list[GroundTruthLabel]
    detections: list[Detection]
    verdicts: list[Verdict]
    deer: list[tuple[float, float]]  # true ENU positions

    @property
    def true_count(self) -> int:
        return len(self.deer)

    def write(self, out_dir: str | Path, write_images: bool = False) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.jsonl", self.images)
        write_labels(out / "labels.jsonl", self.labels)
        write_detections(out / "detections.jsonl", self.detections)
        write_jsonl(out / "verdicts.jsonl", VERDICTS_SCHEMA,
                    (v.to_dict() for v in self.verdicts))
        (out / "plan.json").write_text(self.plan.to_json(), encoding="utf-8")
        truth = {
            "schema": TRUTH_SCHEMA,
            "spec": self.spec.to_dict(),
            "deer_enu": [list(p) for p in self.deer],
            "true_count": self.true_count,
        }
        (out / "truth.json").write_text(
            json.dumps(truth, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        if write_images:
            self._write_placeholder_images(out)

    def _write_placeholder_images(self, out: Path) -> None:
        from PIL import Image, ImageDraw

        cam = builtin_cameras()[self.spec.camera]
        boxes: dict[str, list] = {}
        for lab in self.labels:
            boxes.setdefault(lab.image_id, []).append(lab.bbox)
        (out / "images").mkdir(exist_ok=True)
        for rec in self.images:
            img = Image.new("L", (cam.image_width_px, cam.image_height_px), 168)
            draw = ImageDraw.Draw(img)
            for x, y, w, h in boxes.get(rec.image_id, []):
                draw.ellipse([x, y, x + w, y + h], fill=40)
            img.save(out / rec.file)


def _place_deer(spec: ScenarioSpec, plan: SurveyPlan, margin_m: float,
                rng: np.random.Generator) -> list[tuple[float, float]]:
    """Sample deer inside census-eligible strips, honoring min spacing."""
    strips = [t for t in plan.transects if t.census_length_m > 0]
    if not strips and spec.deer_count > 0:
        raise ValidationError("plan has no census-eligible strips to hold deer")
    half_across = plan.swath_m / 2.0 - margin_m
    if half_across <= 0:
        raise ValidationError("swath too narrow for the placement margin")
    cumulative = np.cumsum([t.census_length_m for t in strips])
    cumulative /= cumulative[-1]
    placed: list[tuple[float, float]] = []
    cell = spec.min_spacing_m
    occupied: dict[tuple[int, int], list[tuple[float, float]]] = {}

    def far_enough(p):
        ce, cn = int(p[0] // cell), int(p[1] // cell)
        for de in (-1, 0, 1):
            for dn in (-1, 0, 1):
                for q in occupied.get((ce + de, cn + dn), ()):
                    if math.dist(p, q) < spec.min_spacing_m:
                        return False
        return True

    consecutive_failures = 0
    while len(placed) < spec.deer_count:
        if consecutive_failures > 20_000:
            raise ValidationError(
                f"could not place {spec.deer_count} deer at {spec.min_spacing_m} m "
                f"spacing; the flown strips are too small")
        t = strips[int(np.searchsorted(cumulative, rng.random()))]
        lo = t.truncated_ends_m + margin_m
        hi = t.length_m - t.truncated_ends_m - margin_m
        if hi <= lo:
            continue
        along = float(rng.uniform(lo, hi))
        across = float(rng.uniform(-half_across, half_across))
        dx = (t.end[0] - t.start[0]) / t.length_m
        dy = (t.end[1] - t.start[1]) / t.length_m
        # right-hand normal of the transect direction
        p = (t.start[0] + along * dx + across * dy,
             t.start[1] + along * dy - across * dx)
        if far_enough(p):
            key = (int(p[0] // cell), int(p[1] // cell))
            occupied.setdefault(key, []).append(p)
            placed.append(p)
            consecutive_failures = 0
        else:
            consecutive_failures += 1
    return placed


def _bearing_deg(dx: float, dy: float) -> float:
    return math.degrees(math.atan2(dx, dy)) % 360.0


def generate(spec: ScenarioSpec) -> SyntheticSurvey:
    """Build the full synthetic survey for a scenario."""
    cam = builtin_cameras()[spec.camera]
    swath = ground_swath(cam, spec.altitude_m)
    extent = along_track_extent(cam, spec.altitude_m)
    step = spec.speed_mps * spec.photo_interval_s
    if step >= extent:
        raise ValidationError(
            f"photo spacing {step} m leaves along-track gaps (footprint {extent} m)")
    gsd = swath / cam.image_width_px
    bbox_px = DEER_SIZE_M / gsd
    margin_m = DEER_SIZE_M / 2.0 + spec.ground_jitter_m + 0.5
    if 2.0 * margin_m > extent - step:
        raise ValidationError(
            "placement margin exceeds the forward-overlap band; lower the "
            "jitter or speed")

    area = [(0.0, 0.0), (spec.area_width_m, 0.0),
            (spec.area_width_m, spec.area_height_m), (0.0, spec.area_height_m)]
    grid = GridSpec(cell_ns_m=spec.grid_cell_ns_m, cell_ew_m=spec.grid_cell_ew_m)
    candidates = generate_transects(area, grid, spec.min_transect_m)
    if not candidates:
        raise ValidationError("area too small to hold any transects")
    achievable = sum(t.length_m for t in candidates) * swath / polygon_area(area)
    coverage_target = spec.select_fraction * achievable * (1.0 - 1e-12)
    plan = plan_survey(
        study_area=area, origin=spec.origin, grid=grid,
        swath_m=swath, coverage_target=coverage_target,
        min_transect_m=spec.min_transect_m, seed=spec.seed,
        max_route_length_m=spec.max_route_length_m, home=(0.0, 0.0),
        speed_mps=spec.speed_mps,
        config={"scenario": spec.to_dict()},
    )

    rng = np.random.default_rng(spec.seed)
    deer = _place_deer(spec, plan, margin_m, rng)

    # spatial hash of deer for fast per-frame lookups
    deer_cell = max(extent, swath)
    deer_grid: dict[tuple[int, int], list[int]] = {}
    for i, p in enumerate(deer):
        deer_grid.setdefault((int(p[0] // deer_cell), int(p[1] // deer_cell)), []).append(i)

    def deer_near(p):
        ce, cn = int(p[0] // deer_cell), int(p[1] // deer_cell)
        for de in (-1, 0, 1):
            for dn in (-1, 0, 1):
                yield from deer_grid.get((ce + de, cn + dn), ())

    by_id = plan.transect_by_id()
    schedule = {e.route_id: e for e in plan.schedule}
    images: list[ImageRecord] = []
    labels: list[GroundTruthLabel] = []
    detections: list[Detection] = []
    verdicts: list[Verdict] = []
    half_l = extent / 2.0
    half_w = swath / 2.0

    for route in plan.routes:
        entry = schedule[route.id]
        t_clock = SYNTH_EPOCH_UTC + entry.start_s
        position = plan.home
        for leg in route.legs:
            tr = by_id[leg.transect_id]
            start, end = (tr.end, tr.start) if leg.reversed else (tr.start, tr.end)
            t_clock += math.dist(position, start) / spec.speed_mps  # ferry
            dx = (end[0] - start[0]) / tr.length_m
            dy = (end[1] - start[1]) / tr.length_m
            heading = _bearing_deg(dx, dy)
            n_steps = int(tr.length_m // step)
            alongs = [k * step for k in range(n_steps + 1)]
            if tr.length_m - alongs[-1] > 1e-9:  # close out at the exact end
                alongs.append(tr.length_m)
            for along in alongs:
                center = (start[0] + along * dx, start[1] + along * dy)
                image_id = f"img{len(images):06d}"
                geo = enu_unproject(plan.origin, center[0], center[1])
                dist_from_tr_start = along if not leg.reversed else tr.length_m - along
                eligible = (tr.census_eligible
                            and tr.truncated_ends_m <= dist_from_tr_start
                            <= tr.length_m - tr.truncated_ends_m)
                pose = FlightPose(position=geo, alt_agl_m=spec.altitude_m,
                                  heading_deg=heading,
                                  timestamp_utc=t_clock + along / spec.speed_mps)
                rec = ImageRecord(
                    image_id=image_id, file=f"images/{image_id}.png",
                    transect_id=tr.id, camera_id=spec.camera,
                    census_eligible=eligible, pose=pose)
                images.append(rec)

                frame_labels: list[GroundTruthLabel] = []
                for di in deer_near(center):
                    px_, py_ = deer[di]
                    fwd = (px_ - center[0]) * dx + (py_ - center[1]) * dy
                    right = (px_ - center[0]) * dy - (py_ - center[1]) * dx
                    if abs(fwd) > half_l - margin_m or abs(right) > half_w - margin_m:
                        continue
                    cx, cy = ground_to_pixel(pose, cam, deer[di], plan.origin)
                    bbox = (cx - bbox_px / 2.0, cy - bbox_px / 2.0, bbox_px, bbox_px)
                    mask = ((cx, cy - bbox_px / 2.0), (cx + bbox_px / 2.0, cy),
                            (cx, cy + bbox_px / 2.0), (cx - bbox_px / 2.0, cy))
                    frame_labels.append(GroundTruthLabel(
                        image_id=image_id, cls="deer", bbox=bbox, mask=mask,
                        observers=("synthA", "synthB")))
                labels.extend(frame_labels)

                for lab in frame_labels:
                    if rng.random() < spec.tp_rate:
                        detections.append(Detection(
                            image_id=image_id, cls="deer",
                            bbox=_jitter_bbox(lab.bbox, spec.ground_jitter_m / gsd,
                                              rng, cam),
                            confidence=float(rng.uniform(*spec.tp_conf)),
                            mask=lab.mask))
                for _ in range(int(rng.poisson(spec.fp_per_image))):
                    x = float(rng.uniform(0, cam.image_width_px - bbox_px))
                    y = float(rng.uniform(0, cam.image_height_px - bbox_px))
                    detections.append(Detection(
                        image_id=image_id, cls="deer",
                        bbox=(x, y, bbox_px, bbox_px),
                        confidence=float(rng.uniform(*spec.fp_conf))))

                for observer in ("obsA", "obsB"):
                    boxes = []
                    for lab in frame_labels:
                        if rng.random() < spec.observer_miss_rate:
                            continue
                        boxes.append(BoxDecision(
                            bbox=_jitter_bbox(lab.bbox, spec.ground_jitter_m / gsd,
                                              rng, cam),
                            cls="deer", action="add_manual"))
                    verdicts.append(Verdict(
                        verdict_id=f"{image_id}/{observer}",
                        image_id=image_id,
                        observer_id=observer,
                        boxes=tuple(boxes),
                        declared_empty=not boxes,
                        duration_s=float(rng.uniform(3.0, 30.0)),
                        submitted_at=pose.timestamp_utc + 86_400.0,
                    ))
            position = end
    return SyntheticSurvey(spec=spec, plan=plan, images=images, labels=labels,
                           detections=detections, verdicts=verdicts, deer=deer)


def _jitter_bbox(bbox, jitter_px: float, rng: np.random.Generator, cam):
    x, y, w, h = bbox
    nx = x + float(rng.uniform(-jitter_px, jitter_px))
    ny = y + float(rng.uniform(-jitter_px, jitter_px))
    nx = min(max(nx, 0.0), cam.image_width_px - w)
    ny = min(max(ny, 0.0), cam.image_height_px - h)
    return (nx, ny, w, h)


def load_scenario(path: str | Path) -> ScenarioSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    doc.pop("schema", None)
    return ScenarioSpec.from_dict(doc)


def load_verdicts(path: str | Path) -> list[Verdict]:
    from .datastore import read_jsonl
    out = []
    for lineno, obj in read_jsonl(path):
        try:
            out.append(Verdict.from_dict(obj))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad verdict: {exc}") from exc
    return out
