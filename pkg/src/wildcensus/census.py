"""Census assembly: observer reconciliation, deduplication, density.

Reconciliation folds per-image verdicts into confirmed sightings: boxes
from different observers covering the same animal (IoU >= 0.10) merge,
boxes backed by a single observer go to the conflict queue, and expert
adjudications override. Sightings are georeferenced through the nadir
camera model, deduplicated by single-linkage clustering in space and time,
and turned into a density / abundance estimate over the surveyed strips.

The dedup radius and time window are survey choices, not measurements;
both are mandatory parameters echoed into every output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .datastore import ImageRecord
from .errors import IncompleteReviewError, ValidationError
from .evaluation import DEFAULT_IOU_THRESHOLD, iou
from .geometry import CameraIntrinsics, GeoPoint, pixel_to_ground
from .planner import SurveyPlan
from .review import BoxDecision, Verdict

CENSUS_SCHEMA = "wildcensus-census/1"
CONFLICTS_SCHEMA = "wildcensus-conflicts/1"

DEFAULT_DEDUP_RADIUS_M = 20.0
DEFAULT_TIME_WINDOW_S = 3.0 * 3600.0


@dataclass(frozen=True)
class ConfirmedSighting:
    sighting_id: str
    image_id: str
    transect_id: int
    cls: str
    ground_point: tuple[float, float]  # ENU meters
    timestamp_utc: float
    supporting_observers: tuple[str, ...]
    source: str  # "human" | "model-assisted"
    adjudicated: bool = False

    def __post_init__(self):
        if len(self.supporting_observers) < 2 and not self.adjudicated:
            raise ValidationError(
                f"sighting {self.sighting_id} needs two supporting observers "
                f"or an adjudication")

    def to_dict(self) -> dict:
        return {
            "sighting_id": self.sighting_id,
            "image_id": self.image_id,
            "transect_id": self.transect_id,
            "class": self.cls,
            "ground_point": list(self.ground_point),
            "timestamp_utc": self.timestamp_utc,
            "supporting_observers": list(self.supporting_observers),
            "source": self.source,
            "adjudicated": self.adjudicated,
        }


@dataclass(frozen=True)
class ConflictBox:
    image_id: str
    observer_id: str
    cls: str
    bbox: tuple[float, float, float, float]
    reason: str

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "observer_id": self.observer_id,
                "class": self.cls, "bbox": list(self.bbox), "reason": self.reason}


@dataclass(frozen=True)
class ReconcileResult:
    sightings: list[ConfirmedSighting]
    conflicts: list[ConflictBox]


def _cluster_boxes(entries: list[tuple[str, BoxDecision]],
                   iou_threshold: float) -> list[list[int]]:
    """Transitive same-animal grouping of (observer, box) pairs by IoU."""
    n = len(entries)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if entries[i][1].cls != entries[j][1].cls:
                continue
            if iou(entries[i][1].bbox, entries[j][1].bbox) >= iou_threshold:
                pi, pj = find(i), find(j)
                if pi != pj:
                    parent[pj] = pi
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[k] for k in sorted(groups, key=lambda k: min(groups[k]))]


def reconcile(verdicts: Iterable[Verdict], images: Sequence[ImageRecord],
              cameras: Mapping[str, CameraIntrinsics], origin: GeoPoint,
              iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> ReconcileResult:
    """Fold verdicts into confirmed sightings plus a conflict queue.

    Every census-eligible image must carry two distinct-observer reviews or
    an adjudication; anything less raises IncompleteReviewError naming the
    images. Verdicts on non-eligible images are ignored.
    """
    by_image: dict[str, list[Verdict]] = {}
    adjudications: dict[str, Verdict] = {}
    for v in verdicts:
        if v.adjudication:
            adjudications[v.image_id] = v
        else:
            by_image.setdefault(v.image_id, []).append(v)

    incomplete: list[str] = []
    sightings: list[ConfirmedSighting] = []
    conflicts: list[ConflictBox] = []

    for rec in images:
        if not rec.census_eligible:
            continue
        reviews = by_image.get(rec.image_id, [])
        observers = {v.observer_id for v in reviews}
        adjudicated = rec.image_id in adjudications
        if len(observers) < 2 and not adjudicated:
            incomplete.append(rec.image_id)
            continue
        cam = cameras.get(rec.camera_id)
        if cam is None:
            raise ValidationError(
                f"image {rec.image_id}: unknown camera {rec.camera_id!r}")
        if adjudicated:
            expert = adjudications[rec.image_id]
            for k, box in enumerate(expert.counted_boxes()):
                sightings.append(_make_sighting(
                    rec, cam, origin, f"{rec.image_id}#{k}", [box],
                    supporters=(expert.observer_id,), adjudicated=True))
            continue
        entries: list[tuple[str, BoxDecision]] = []
        for v in reviews:
            for box in v.counted_boxes():
                entries.append((v.observer_id, box))
        k = 0
        for group in _cluster_boxes(entries, iou_threshold):
            supporters = tuple(sorted({entries[i][0] for i in group}))
            boxes = [entries[i][1] for i in group]
            if len(supporters) >= 2:
                sightings.append(_make_sighting(
                    rec, cam, origin, f"{rec.image_id}#{k}", boxes,
                    supporters=supporters, adjudicated=False))
                k += 1
            else:
                for i in group:
                    conflicts.append(ConflictBox(
                        image_id=rec.image_id, observer_id=entries[i][0],
                        cls=entries[i][1].cls, bbox=entries[i][1].bbox,
                        reason="single-observer box pending adjudication"))

    if incomplete:
        raise IncompleteReviewError(incomplete)
    return ReconcileResult(sightings=sightings, conflicts=conflicts)


def _make_sighting(rec: ImageRecord, cam: CameraIntrinsics, origin: GeoPoint,
                   sighting_id: str, boxes: list[BoxDecision],
                   supporters: tuple[str, ...], adjudicated: bool) -> ConfirmedSighting:
    if rec.pose is None:
        raise ValidationError(f"image {rec.image_id} lacks a pose")
    cx = sum(b.bbox[0] + b.bbox[2] / 2.0 for b in boxes) / len(boxes)
    cy = sum(b.bbox[1] + b.bbox[3] / 2.0 for b in boxes) / len(boxes)
    ground = pixel_to_ground(rec.pose, cam, (cx, cy), origin)
    source = ("model-assisted"
              if any(b.action == "confirm_model" for b in boxes) else "human")
    return ConfirmedSighting(
        sighting_id=sighting_id,
        image_id=rec.image_id,
        transect_id=rec.transect_id,
        cls=boxes[0].cls,
        ground_point=ground,
        timestamp_utc=rec.pose.timestamp_utc,
        supporting_observers=supporters,
        source=source,
        adjudicated=adjudicated,
    )


@dataclass(frozen=True)
class UniqueIndividual:
    individual_id: int
    sightings: tuple[ConfirmedSighting, ...]
    centroid: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "individual_id": self.individual_id,
            "sighting_ids": [s.sighting_id for s in self.sightings],
            "centroid": list(self.centroid),
            "class": self.sightings[0].cls,
        }


def dedup(sightings: Sequence[ConfirmedSighting],
          dedup_radius_m: float = DEFAULT_DEDUP_RADIUS_M,
          time_window_s: float = DEFAULT_TIME_WINDOW_S) -> list[UniqueIndividual]:
    """Single-linkage clustering of sightings into unique individuals.

    Two sightings of the same class join one individual when they lie
    within dedup_radius_m on the ground and within time_window_s of each
    other; linkage is transitive. The result is a partition independent of
    the input order (a spatial hash keeps the pair scan near-linear).
    """
    if not (dedup_radius_m > 0) or not (time_window_s > 0):
        raise ValidationError("dedup radius and time window must be positive")
    for s in sightings:
        if s.ground_point is None:
            raise ValidationError(f"sighting {s.sighting_id} has no ground point")

    # canonical order de-couples the clustering from input permutation
    order = sorted(range(len(sightings)),
                   key=lambda i: (sightings[i].timestamp_utc,
                                  sightings[i].image_id,
                                  sightings[i].sighting_id))
    parent = list(range(len(order)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        pi, pj = find(i), find(j)
        if pi != pj:
            parent[max(pi, pj)] = min(pi, pj)

    cell = dedup_radius_m
    grid: dict[tuple[int, int], list[int]] = {}
    for rank, idx in enumerate(order):
        e, n = sightings[idx].ground_point
        grid.setdefault((int(e // cell), int(n // cell)), []).append(rank)
    for (ce, cn), members in grid.items():
        neighbors: list[int] = []
        for de in (-1, 0, 1):
            for dn in (-1, 0, 1):
                neighbors.extend(grid.get((ce + de, cn + dn), ()))
        for i in members:
            a = sightings[order[i]]
            for j in neighbors:
                if j <= i:
                    continue
                b = sightings[order[j]]
                if a.cls != b.cls:
                    continue
                if abs(a.timestamp_utc - b.timestamp_utc) > time_window_s:
                    continue
                de_m = a.ground_point[0] - b.ground_point[0]
                dn_m = a.ground_point[1] - b.ground_point[1]
                if de_m * de_m + dn_m * dn_m <= dedup_radius_m * dedup_radius_m:
                    union(i, j)

    clusters: dict[int, list[int]] = {}
    for rank in range(len(order)):
        clusters.setdefault(find(rank), []).append(rank)
    individuals: list[UniqueIndividual] = []
    for root in sorted(clusters):
        members = [sightings[order[r]] for r in clusters[root]]
        e = sum(s.ground_point[0] for s in members) / len(members)
        n = sum(s.ground_point[1] for s in members) / len(members)
        individuals.append(UniqueIndividual(
            individual_id=len(individuals),
            sightings=tuple(members),
            centroid=(e, n),
        ))
    return individuals


@dataclass(frozen=True)
class CensusEstimate:
    unique_count: int
    surveyed_area_m2: float
    density_per_km2: float
    study_area_m2: float
    abundance: float

    def to_dict(self) -> dict:
        return {
            "unique_count": self.unique_count,
            "surveyed_area_m2": self.surveyed_area_m2,
            "density_per_km2": self.density_per_km2,
            "study_area_m2": self.study_area_m2,
            "abundance": self.abundance,
        }


def estimate(unique_count: int, plan: SurveyPlan) -> CensusEstimate:
    """Density over the surveyed strips, extrapolated uniformly to the area."""
    surveyed = plan.surveyed_area_m2()
    if surveyed <= 0:
        raise ValidationError("surveyed area is zero; nothing was flown")
    density = unique_count / (surveyed / 1e6)
    abundance = density * (plan.study_area_m2 / 1e6)
    return CensusEstimate(
        unique_count=unique_count,
        surveyed_area_m2=surveyed,
        density_per_km2=density,
        study_area_m2=plan.study_area_m2,
        abundance=abundance,
    )


@dataclass(frozen=True)
class CensusReport:
    params: dict
    individuals: list[UniqueIndividual]
    estimate: CensusEstimate
    conflicts: list[ConflictBox]
    sources: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": CENSUS_SCHEMA,
            "params": self.params,
            "individuals": [u.to_dict() for u in self.individuals],
            "estimate": self.estimate.to_dict(),
            "conflict_count": len(self.conflicts),
            "sources": self.sources,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run_census(verdicts: Iterable[Verdict], images: Sequence[ImageRecord],
               cameras: Mapping[str, CameraIntrinsics], plan: SurveyPlan,
               cls: str = "deer",
               dedup_radius_m: float = DEFAULT_DEDUP_RADIUS_M,
               time_window_s: float = DEFAULT_TIME_WINDOW_S,
               iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> CensusReport:
    """Reconcile -> dedup -> estimate, for one census class."""
    result = reconcile(verdicts, images, cameras, plan.origin, iou_threshold)
    class_sightings = [s for s in result.sightings if s.cls == cls]
    individuals = dedup(class_sightings, dedup_radius_m, time_window_s)
    sources: dict[str, int] = {}
    for s in class_sightings:
        sources[s.source] = sources.get(s.source, 0) + 1
    return CensusReport(
        params={
            "class": cls,
            # defaults are survey choices, surfaced so consumers see them
            "dedup_radius_m": dedup_radius_m,
            "time_window_s": time_window_s,
            "iou_threshold": iou_threshold,
        },
        individuals=individuals,
        estimate=estimate(len(individuals), plan),
        conflicts=result.conflicts,
        sources=sources,
    )


def write_conflicts(path, conflicts: Sequence[ConflictBox]) -> None:
    from .datastore import write_jsonl
    write_jsonl(path, CONFLICTS_SCHEMA, (c.to_dict() for c in conflicts))
