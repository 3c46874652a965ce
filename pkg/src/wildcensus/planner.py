"""Strip-transect survey planning.

Transects run along the grid's N-S axis, one line per grid column, split
into cell-length segments and clipped to the study area. A seeded random
selection grows until the requested coverage fraction is met, selected
transects are packed into flight routes by a greedy nearest-endpoint
heuristic, and long gaps between consecutive transects get E-W connector
transects whose trimmed ends are excluded from counting.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace

from .errors import PlanningError, ValidationError
from .geometry import GeoPoint, enu_project, enu_unproject

PLAN_SCHEMA = "wildcensus-plan/1"

Point = tuple[float, float]

DEFAULT_MIN_SEPARATION_M = 500.0
DEFAULT_MAX_WINDOW_S = 3.0 * 3600.0


@dataclass(frozen=True)
class GridSpec:
    """Survey grid: N-S cell length, E-W column spacing, axis orientation."""

    cell_ns_m: float = 1500.0
    cell_ew_m: float = 100.0
    orientation_deg: float = 0.0

    def __post_init__(self):
        if not (self.cell_ns_m > 0) or not (self.cell_ew_m > 0):
            raise ValidationError(
                f"grid cells must be positive, got {self.cell_ns_m} x {self.cell_ew_m}")


@dataclass(frozen=True)
class Transect:
    """One flyable survey line in ENU meters.

    Connector transects keep census_eligible=True but carry nonzero
    truncated_ends_m: images within that distance of either end are
    excluded from counting while remaining usable for model training.
    """

    id: int
    start: Point
    end: Point
    kind: str  # "primary" | "connector"
    census_eligible: bool = True
    truncated_ends_m: float = 0.0
    training_eligible: bool = True

    @property
    def length_m(self) -> float:
        return math.dist(self.start, self.end)

    @property
    def census_length_m(self) -> float:
        """Length of the stretch whose images count toward the census."""
        if not self.census_eligible:
            return 0.0
        return max(0.0, self.length_m - 2.0 * self.truncated_ends_m)

    def point_at(self, distance_m: float) -> Point:
        t = distance_m / self.length_m
        return (self.start[0] + t * (self.end[0] - self.start[0]),
                self.start[1] + t * (self.end[1] - self.start[1]))


@dataclass(frozen=True)
class RouteLeg:
    transect_id: int
    reversed: bool = False


@dataclass(frozen=True)
class Route:
    id: int
    legs: tuple[RouteLeg, ...]
    length_m: float  # transects + ferries + both home legs

    @property
    def transect_ids(self) -> tuple[int, ...]:
        return tuple(leg.transect_id for leg in self.legs)


@dataclass(frozen=True)
class ScheduleEntry:
    route_id: int
    start_s: float
    speed_mps: float


@dataclass(frozen=True)
class ScheduleViolation:
    kind: str  # "separation" | "window"
    message: str


@dataclass
class SurveyPlan:
    origin: GeoPoint
    study_area: list[Point]
    study_area_m2: float
    grid: GridSpec
    swath_m: float
    coverage_target: float
    achieved_coverage: float
    min_transect_m: float
    seed: int
    max_route_length_m: float
    home: Point
    transects: list[Transect]  # selected primaries + connectors, id-indexed
    routes: list[Route]
    schedule: list[ScheduleEntry]
    min_separation_m: float = DEFAULT_MIN_SEPARATION_M
    max_window_s: float = DEFAULT_MAX_WINDOW_S
    config: dict = field(default_factory=dict)

    def transect_by_id(self) -> dict[int, Transect]:
        return {t.id: t for t in self.transects}

    def surveyed_area_m2(self) -> float:
        """Census strip area: eligible transect length times swath."""
        return sum(t.census_length_m * self.swath_m for t in self.transects)

    def validate(self) -> None:
        if self.achieved_coverage < self.coverage_target - 1e-12:
            raise PlanningError(
                f"achieved coverage {self.achieved_coverage:.4f} below target "
                f"{self.coverage_target:.4f}")
        routed: list[int] = []
        for route in self.routes:
            routed.extend(route.transect_ids)
            if route.length_m > self.max_route_length_m + 1e-6:
                raise PlanningError(
                    f"route {route.id} length {route.length_m:.1f} m exceeds "
                    f"budget {self.max_route_length_m:.1f} m")
        if len(routed) != len(set(routed)):
            raise PlanningError("a transect appears in more than one route")
        if set(routed) != {t.id for t in self.transects}:
            raise PlanningError("routed transect ids do not match the plan's transects")
        for t in self.transects:
            if t.kind == "primary" and t.length_m < self.min_transect_m - 1e-9:
                raise PlanningError(
                    f"primary transect {t.id} shorter than {self.min_transect_m} m")

    def to_dict(self) -> dict:
        return {
            "schema": PLAN_SCHEMA,
            "config": self.config,
            "origin": {"lat": self.origin.lat, "lon": self.origin.lon},
            "study_area_enu": [list(p) for p in self.study_area],
            "study_area_m2": self.study_area_m2,
            "grid": {
                "cell_ns_m": self.grid.cell_ns_m,
                "cell_ew_m": self.grid.cell_ew_m,
                "orientation_deg": self.grid.orientation_deg,
            },
            "swath_m": self.swath_m,
            "coverage_target": self.coverage_target,
            "achieved_coverage": self.achieved_coverage,
            "min_transect_m": self.min_transect_m,
            "seed": self.seed,
            "max_route_length_m": self.max_route_length_m,
            "home": list(self.home),
            "transects": [
                {
                    "id": t.id,
                    "start_enu": list(t.start),
                    "end_enu": list(t.end),
                    "start_geo": _geo_pair(self.origin, t.start),
                    "end_geo": _geo_pair(self.origin, t.end),
                    "length_m": t.length_m,
                    "kind": t.kind,
                    "census_eligible": t.census_eligible,
                    "truncated_ends_m": t.truncated_ends_m,
                    "training_eligible": t.training_eligible,
                }
                for t in self.transects
            ],
            "routes": [
                {
                    "id": r.id,
                    "legs": [{"transect_id": leg.transect_id, "reversed": leg.reversed}
                             for leg in r.legs],
                    "length_m": r.length_m,
                }
                for r in self.routes
            ],
            "schedule": {
                "min_separation_m": self.min_separation_m,
                "max_window_s": self.max_window_s,
                "entries": [
                    {"route_id": e.route_id, "start_s": e.start_s, "speed_mps": e.speed_mps}
                    for e in self.schedule
                ],
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "SurveyPlan":
        if doc.get("schema") != PLAN_SCHEMA:
            raise ValidationError(f"expected {PLAN_SCHEMA}, got {doc.get('schema')!r}")
        origin = GeoPoint(lat=doc["origin"]["lat"], lon=doc["origin"]["lon"])
        grid = GridSpec(cell_ns_m=doc["grid"]["cell_ns_m"],
                        cell_ew_m=doc["grid"]["cell_ew_m"],
                        orientation_deg=doc["grid"]["orientation_deg"])
        transects = [
            Transect(
                id=t["id"],
                start=tuple(t["start_enu"]),
                end=tuple(t["end_enu"]),
                kind=t["kind"],
                census_eligible=t["census_eligible"],
                truncated_ends_m=t["truncated_ends_m"],
                training_eligible=t.get("training_eligible", True),
            )
            for t in doc["transects"]
        ]
        routes = [
            Route(id=r["id"],
                  legs=tuple(RouteLeg(leg["transect_id"], leg["reversed"])
                             for leg in r["legs"]),
                  length_m=r["length_m"])
            for r in doc["routes"]
        ]
        schedule = [ScheduleEntry(e["route_id"], e["start_s"], e["speed_mps"])
                    for e in doc["schedule"]["entries"]]
        return cls(
            origin=origin,
            study_area=[tuple(p) for p in doc["study_area_enu"]],
            study_area_m2=doc["study_area_m2"],
            grid=grid,
            swath_m=doc["swath_m"],
            coverage_target=doc["coverage_target"],
            achieved_coverage=doc["achieved_coverage"],
            min_transect_m=doc["min_transect_m"],
            seed=doc["seed"],
            max_route_length_m=doc["max_route_length_m"],
            home=tuple(doc["home"]),
            transects=transects,
            routes=routes,
            schedule=schedule,
            min_separation_m=doc["schedule"]["min_separation_m"],
            max_window_s=doc["schedule"]["max_window_s"],
            config=doc.get("config", {}),
        )


def _geo_pair(origin: GeoPoint, point: Point) -> list[float]:
    geo = enu_unproject(origin, point[0], point[1])
    return [geo.lat, geo.lon]


def polygon_area(ring: list[Point]) -> float:
    acc = 0.0
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) / 2.0


def _rotate(p: Point, angle_rad: float) -> Point:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return (p[0] * c - p[1] * s, p[0] * s + p[1] * c)


def _line_polygon_intervals(ring: list[Point], x: float) -> list[tuple[float, float]]:
    """Inside intervals of the vertical line at x, by even-odd crossings."""
    crossings: list[float] = []
    n = len(ring)
    for i in range(n):
        (x0, y0), (x1, y1) = ring[i], ring[(i + 1) % n]
        if x0 == x1:
            continue  # vertical edge: grazing contact, no crossing
        lo, hi = (x0, x1) if x0 < x1 else (x1, x0)
        # half-open rule so shared vertices count once
        if lo <= x < hi:
            t = (x - x0) / (x1 - x0)
            crossings.append(y0 + t * (y1 - y0))
    crossings.sort()
    return [(crossings[i], crossings[i + 1]) for i in range(0, len(crossings) - 1, 2)]


def generate_transects(study_area: list[Point], grid: GridSpec,
                       min_length_m: float) -> list[Transect]:
    """Lay grid-column transects over the study area, clipped to its boundary.

    Geometry is computed relative to the area's bounding-box corner, so
    translating the study area translates the output without altering the
    relative layout.
    """
    if not (min_length_m > 0):
        raise ValidationError(f"min transect length must be > 0, got {min_length_m}")
    if len(study_area) < 3 or polygon_area(study_area) <= 0.0:
        raise ValidationError("study area must be a polygon with nonzero area")

    angle = math.radians(grid.orientation_deg)
    ring = [_rotate(p, -angle) for p in study_area]
    min_x = min(p[0] for p in ring)
    min_y = min(p[1] for p in ring)
    ring = [(p[0] - min_x, p[1] - min_y) for p in ring]
    width = max(p[0] for p in ring)
    height = max(p[1] for p in ring)

    transects: list[Transect] = []
    col = 0
    while (col + 0.5) * grid.cell_ew_m < width:
        x = (col + 0.5) * grid.cell_ew_m
        intervals = _line_polygon_intervals(ring, x)
        row = 0
        while row * grid.cell_ns_m < height:
            seg_lo = row * grid.cell_ns_m
            seg_hi = seg_lo + grid.cell_ns_m
            for lo, hi in intervals:
                piece_lo, piece_hi = max(lo, seg_lo), min(hi, seg_hi)
                if piece_hi - piece_lo >= min_length_m:
                    start = _rotate((x + min_x, piece_lo + min_y), angle)
                    end = _rotate((x + min_x, piece_hi + min_y), angle)
                    transects.append(Transect(id=len(transects), start=start,
                                              end=end, kind="primary"))
            row += 1
        col += 1
    return transects


def select_transects(transects: list[Transect], coverage_target: float,
                     swath_m: float, study_area_m2: float, seed: int) -> list[Transect]:
    """Seeded draw without replacement until the coverage target is met.

    The selection is the shortest prefix of the seeded shuffle whose strip
    area reaches coverage_target * study_area_m2.
    """
    if not (0.0 <= coverage_target <= 1.0):
        raise ValidationError(f"coverage target must be in [0, 1], got {coverage_target}")
    if not (swath_m > 0) or not (study_area_m2 > 0):
        raise ValidationError("swath and study area must be positive")
    order = sorted(transects, key=lambda t: t.id)
    random.Random(seed).shuffle(order)
    selected: list[Transect] = []
    covered = 0.0
    needed = coverage_target * study_area_m2
    for t in order:
        if covered >= needed:
            break
        selected.append(t)
        covered += t.length_m * swath_m
    if covered < needed:
        raise PlanningError(
            f"transects cover only {covered / study_area_m2:.4f} of the study area, "
            f"below the {coverage_target:.4f} target")
    return selected


def _nearest_endpoint(point: Point, t: Transect) -> tuple[float, bool]:
    """Distance to the nearer transect endpoint, and whether entry is reversed."""
    d_start = math.dist(point, t.start)
    d_end = math.dist(point, t.end)
    if d_end < d_start:
        return d_end, True
    return d_start, False


def pack_routes(selected: list[Transect], max_route_length_m: float,
                home: Point) -> list[Route]:
    """Greedy nearest-endpoint packing of transects into flight routes.

    Route length counts transects, ferries between them, and both legs to
    and from home. The greedy always considers the nearest unrouted
    transect; when it no longer fits, the route is closed.
    """
    for t in selected:
        if t.length_m > max_route_length_m:
            raise PlanningError(
                f"transect {t.id} ({t.length_m:.1f} m) exceeds the route budget "
                f"{max_route_length_m:.1f} m")
    remaining = sorted(selected, key=lambda t: t.id)
    routes: list[Route] = []
    while remaining:
        # open a route at the transect nearest home
        best = min(remaining, key=lambda t: (_nearest_endpoint(home, t)[0], t.id))
        dist, rev = _nearest_endpoint(home, best)
        exit_point = best.start if rev else best.end
        flown = dist + best.length_m
        if flown + math.dist(exit_point, home) > max_route_length_m:
            raise PlanningError(
                f"transect {best.id} cannot be flown within the route budget "
                f"{max_route_length_m:.1f} m including home legs")
        legs = [RouteLeg(best.id, rev)]
        remaining.remove(best)
        while remaining:
            cand = min(remaining, key=lambda t: (_nearest_endpoint(exit_point, t)[0], t.id))
            ferry, rev = _nearest_endpoint(exit_point, cand)
            cand_exit = cand.start if rev else cand.end
            total = flown + ferry + cand.length_m + math.dist(cand_exit, home)
            if total > max_route_length_m:
                break
            legs.append(RouteLeg(cand.id, rev))
            flown += ferry + cand.length_m
            exit_point = cand_exit
            remaining.remove(cand)
        flown += math.dist(exit_point, home)
        routes.append(Route(id=len(routes), legs=tuple(legs), length_m=flown))
    return routes


def add_connectors(routes: list[Route], transects: list[Transect],
                   gap_threshold_m: float = 1500.0,
                   truncation_m: float = 100.0) -> tuple[list[Route], list[Transect]]:
    """Insert connector transects where consecutive legs sit far apart.

    The connector follows the ferry line between the previous exit and the
    next entry (predominantly the grid's E-W axis for column transects).
    Its first and last truncation_m are excluded from counting; its imagery
    stays flagged usable for training.
    """
    by_id = {t.id: t for t in transects}
    out_transects = list(transects)
    next_id = max((t.id for t in transects), default=-1) + 1
    out_routes: list[Route] = []
    for route in routes:
        new_legs: list[RouteLeg] = []
        prev_exit: Point | None = None
        for leg in route.legs:
            t = by_id[leg.transect_id]
            entry = t.end if leg.reversed else t.start
            if prev_exit is not None and math.dist(prev_exit, entry) > gap_threshold_m:
                conn = Transect(
                    id=next_id,
                    start=prev_exit,
                    end=entry,
                    kind="connector",
                    census_eligible=True,
                    truncated_ends_m=truncation_m,
                    training_eligible=True,
                )
                next_id += 1
                out_transects.append(conn)
                new_legs.append(RouteLeg(conn.id, False))
            new_legs.append(leg)
            prev_exit = t.start if leg.reversed else t.end
        out_routes.append(replace(route, legs=tuple(new_legs)))
    return out_routes, out_transects


def _segment_distance(a0: Point, a1: Point, b0: Point, b1: Point) -> float:
    """Minimum distance between two segments."""
    def point_seg(p: Point, q0: Point, q1: Point) -> float:
        vx, vy = q1[0] - q0[0], q1[1] - q0[1]
        wx, wy = p[0] - q0[0], p[1] - q0[1]
        vv = vx * vx + vy * vy
        t = 0.0 if vv == 0 else max(0.0, min(1.0, (wx * vx + wy * vy) / vv))
        return math.dist(p, (q0[0] + t * vx, q0[1] + t * vy))

    def intersects() -> bool:
        def orient(p, q, r):
            return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        d1, d2 = orient(a0, a1, b0), orient(a0, a1, b1)
        d3, d4 = orient(b0, b1, a0), orient(b0, b1, a1)
        return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))

    if intersects():
        return 0.0
    return min(point_seg(a0, b0, b1), point_seg(a1, b0, b1),
               point_seg(b0, a0, a1), point_seg(b1, a0, a1))


def route_separation_m(a: Route, b: Route, by_id: dict[int, Transect]) -> float:
    """Minimum distance between any transect segments of two routes."""
    best = math.inf
    for la in a.legs:
        ta = by_id[la.transect_id]
        for lb in b.legs:
            tb = by_id[lb.transect_id]
            best = min(best, _segment_distance(ta.start, ta.end, tb.start, tb.end))
    return best


def make_schedule(routes: list[Route], speed_mps: float,
                  turnaround_s: float = 120.0) -> list[ScheduleEntry]:
    """Back-to-back schedule: each route starts when the previous one lands."""
    if not (speed_mps > 0):
        raise ValidationError(f"speed must be > 0, got {speed_mps}")
    entries: list[ScheduleEntry] = []
    t = 0.0
    for route in routes:
        entries.append(ScheduleEntry(route_id=route.id, start_s=t, speed_mps=speed_mps))
        t += route.length_m / speed_mps + turnaround_s
    return entries


def validate_schedule(plan: SurveyPlan) -> list[ScheduleViolation]:
    """Check spacing between consecutively flown routes and the session window."""
    violations: list[ScheduleViolation] = []
    by_id = plan.transect_by_id()
    routes = {r.id: r for r in plan.routes}
    entries = sorted(plan.schedule, key=lambda e: e.start_s)
    for prev, cur in zip(entries, entries[1:]):
        sep = route_separation_m(routes[prev.route_id], routes[cur.route_id], by_id)
        if sep < plan.min_separation_m:
            violations.append(ScheduleViolation(
                kind="separation",
                message=(f"routes {prev.route_id} and {cur.route_id} flown "
                         f"consecutively are {sep:.0f} m apart "
                         f"(minimum {plan.min_separation_m:.0f} m)")))
    if entries:
        window = max(e.start_s + routes[e.route_id].length_m / e.speed_mps
                     for e in entries) - min(e.start_s for e in entries)
        if window > plan.max_window_s:
            violations.append(ScheduleViolation(
                kind="window",
                message=(f"schedule spans {window / 3600.0:.2f} h "
                         f"(maximum {plan.max_window_s / 3600.0:.2f} h)")))
    return violations


def load_study_area(doc: dict, origin: GeoPoint | None = None
                    ) -> tuple[list[Point], GeoPoint]:
    """Read a GeoJSON-style polygon (WGS84 lon/lat ring) into ENU meters."""
    geom = doc
    if doc.get("type") == "Feature":
        geom = doc["geometry"]
    elif doc.get("type") == "FeatureCollection":
        feats = doc.get("features") or []
        if not feats:
            raise ValidationError("FeatureCollection has no features")
        geom = feats[0]["geometry"]
    if geom.get("type") != "Polygon":
        raise ValidationError(f"expected a Polygon geometry, got {geom.get('type')!r}")
    ring_lonlat = geom["coordinates"][0]
    if len(ring_lonlat) < 3:
        raise ValidationError("polygon ring needs at least 3 vertices")
    # drop a closing vertex that repeats the first
    if ring_lonlat[0] == ring_lonlat[-1]:
        ring_lonlat = ring_lonlat[:-1]
    if origin is None:
        origin = GeoPoint(lat=ring_lonlat[0][1], lon=ring_lonlat[0][0])
    ring = [enu_project(origin, GeoPoint(lat=lat, lon=lon)) for lon, lat in ring_lonlat]
    return ring, origin


def plan_survey(study_area: list[Point], origin: GeoPoint, grid: GridSpec,
                swath_m: float, coverage_target: float, min_transect_m: float,
                seed: int, max_route_length_m: float, home: Point,
                speed_mps: float, gap_threshold_m: float = 1500.0,
                truncation_m: float = 100.0, config: dict | None = None) -> SurveyPlan:
    """Generate, select, pack, connect and schedule a full survey plan."""
    area_m2 = polygon_area(study_area)
    if area_m2 <= 0:
        raise ValidationError("study area must have nonzero area")
    candidates = generate_transects(study_area, grid, min_transect_m)
    selected = select_transects(candidates, coverage_target, swath_m, area_m2, seed)
    routes = pack_routes(selected, max_route_length_m, home)
    routes, transects = add_connectors(routes, selected, gap_threshold_m, truncation_m)
    schedule = make_schedule(routes, speed_mps)
    achieved = sum(t.length_m * swath_m for t in selected) / area_m2
    plan = SurveyPlan(
        origin=origin,
        study_area=list(study_area),
        study_area_m2=area_m2,
        grid=grid,
        swath_m=swath_m,
        coverage_target=coverage_target,
        achieved_coverage=achieved,
        min_transect_m=min_transect_m,
        seed=seed,
        max_route_length_m=max_route_length_m,
        home=home,
        transects=transects,
        routes=routes,
        schedule=schedule,
        config=config or {},
    )
    plan.validate()
    return plan
