"""Detection metrics: IoU matching, precision-recall, AP, threshold sweeps.

The matching threshold defaults to IoU 0.10: the animals occupy a tiny
fraction of each frame, so framing quality is irrelevant and a loose
overlap criterion avoids punishing slightly offset boxes.

Matching is greedy in descending confidence (ties broken by bbox x, then
y), each detection taking the unmatched same-class label of highest IoU at
or above the threshold. Because a detection's assignment depends only on
higher-confidence detections, matching once with no confidence floor and
truncating at any threshold tau is identical to re-matching the filtered
set; the sweep exploits that.

AP is the exact area under the interpolated precision envelope (all-points
interpolation), computed from integer TP/FP counts so that a perfect
detector scores exactly 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .datastore import BBox, Detection, GroundTruthLabel
from .errors import ValidationError

DEFAULT_IOU_THRESHOLD = 0.10
DEFAULT_SWEEP_GRID: tuple[float, ...] = tuple(i / 200 for i in range(201))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValidationError(f"degenerate bbox: {a} vs {b}")
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


@dataclass(frozen=True)
class DetectionOutcome:
    detection: Detection
    tp: bool
    matched_label: int | None  # index into the image's label list


@dataclass(frozen=True)
class MatchResult:
    image_id: str
    iou_threshold: float
    confidence_threshold: float
    outcomes: tuple[DetectionOutcome, ...]  # in processing order
    label_matched: tuple[bool, ...]

    @property
    def tp(self) -> int:
        return sum(1 for o in self.outcomes if o.tp)

    @property
    def fp(self) -> int:
        return sum(1 for o in self.outcomes if not o.tp)

    @property
    def fn(self) -> int:
        return sum(1 for m in self.label_matched if not m)


def match(dets: Sequence[Detection], labels: Sequence[GroundTruthLabel],
          iou_threshold: float = DEFAULT_IOU_THRESHOLD,
          confidence_threshold: float = 0.0) -> MatchResult:
    """Greedily match one image's detections against its labels."""
    image_ids = {d.image_id for d in dets} | {l.image_id for l in labels}
    if len(image_ids) > 1:
        raise ValidationError(f"match() got records from several images: {sorted(image_ids)}")
    image_id = next(iter(image_ids)) if image_ids else ""

    kept = [d for d in dets if d.confidence >= confidence_threshold]
    kept.sort(key=lambda d: (-d.confidence, d.bbox[0], d.bbox[1]))
    matched = [False] * len(labels)
    outcomes: list[DetectionOutcome] = []
    for det in kept:
        best_iou = 0.0
        best_idx = None
        for idx, lab in enumerate(labels):
            if matched[idx] or lab.cls != det.cls:
                continue
            overlap = iou(det.bbox, lab.bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_idx = idx
        if best_idx is None:
            outcomes.append(DetectionOutcome(det, tp=False, matched_label=None))
        else:
            matched[best_idx] = True
            outcomes.append(DetectionOutcome(det, tp=True, matched_label=best_idx))
    return MatchResult(
        image_id=image_id,
        iou_threshold=iou_threshold,
        confidence_threshold=confidence_threshold,
        outcomes=tuple(outcomes),
        label_matched=tuple(matched),
    )


@dataclass(frozen=True)
class PRPoint:
    confidence: float
    recall: float
    precision: float
    tp: int = 0  # cumulative counts behind this point, when known
    fp: int = 0
    n_labels: int = 0


def _group_by_image(records):
    grouped: dict[str, list] = {}
    for rec in records:
        grouped.setdefault(rec.image_id, []).append(rec)
    return grouped


@dataclass(frozen=True)
class RankedDetections:
    """Set-level matching output: detections ranked by confidence with TP flags."""

    cls: str
    confidences: np.ndarray  # descending
    tp_flags: np.ndarray  # bool, same order
    n_labels: int

    def prefix_for(self, tau: float) -> int:
        """Number of ranked detections with confidence >= tau."""
        return int(np.searchsorted(-self.confidences, -tau, side="right"))


def rank_detections(dets: Sequence[Detection], labels: Sequence[GroundTruthLabel],
                    cls: str, iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                    confidence_threshold: float = 0.0,
                    threads: int = 1) -> RankedDetections:
    """Match per image, then rank one class's detections globally.

    Per-image matching is independent; with threads > 1 it fans out over a
    pool, and the deterministic global sort makes the result identical to
    the sequential one regardless of completion order.
    """
    dets = [d for d in dets if d.cls == cls]
    labels = [l for l in labels if l.cls == cls]
    det_groups = _group_by_image(dets)
    label_groups = _group_by_image(labels)
    image_ids = sorted(set(det_groups) | set(label_groups))

    def match_one(image_id: str) -> list[tuple[float, str, float, float, bool]]:
        result = match(det_groups.get(image_id, []), label_groups.get(image_id, []),
                       iou_threshold, confidence_threshold)
        return [(-o.detection.confidence, image_id,
                 o.detection.bbox[0], o.detection.bbox[1], o.tp)
                for o in result.outcomes]

    ranked: list[tuple[float, str, float, float, bool]] = []
    if threads > 1 and len(image_ids) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for chunk in pool.map(match_one, image_ids):
                ranked.extend(chunk)
    else:
        for image_id in image_ids:
            ranked.extend(match_one(image_id))
    ranked.sort()
    return RankedDetections(
        cls=cls,
        confidences=np.array([-r[0] for r in ranked], dtype=float),
        tp_flags=np.array([r[4] for r in ranked], dtype=bool),
        n_labels=len(labels),
    )


def pr_points_from_ranked(ranked: RankedDetections, n: int | None = None) -> list[PRPoint]:
    """Cumulative (recall, precision) after each ranked detection."""
    if ranked.n_labels == 0:
        raise ValidationError("precision-recall needs at least one ground-truth label")
    if n is None:
        n = len(ranked.confidences)
    points: list[PRPoint] = []
    tp = fp = 0
    for i in range(n):
        if ranked.tp_flags[i]:
            tp += 1
        else:
            fp += 1
        points.append(PRPoint(
            confidence=float(ranked.confidences[i]),
            recall=tp / ranked.n_labels,
            precision=tp / (tp + fp),
            tp=tp, fp=fp, n_labels=ranked.n_labels,
        ))
    return points


def pr_curve(dets: Sequence[Detection], labels: Sequence[GroundTruthLabel],
             cls: str = "deer", iou_threshold: float = DEFAULT_IOU_THRESHOLD,
             confidence_threshold: float = 0.0) -> list[PRPoint]:
    """Precision-recall sweep over one class's detections, by confidence."""
    ranked = rank_detections(dets, labels, cls, iou_threshold, confidence_threshold)
    return pr_points_from_ranked(ranked)


def average_precision(points: Sequence[PRPoint | tuple]) -> float:
    """Area under the interpolated precision envelope over recall in [0, 1].

    PRPoint inputs use their integer cumulative counts, which keeps the
    result exact for perfect detectors; bare (recall, precision) pairs fall
    back to float recall increments.
    """
    if len(points) == 0:
        raise ValidationError("cannot integrate an empty precision-recall curve")

    def suffix_max(values: list[float]) -> list[float]:
        env = [0.0] * len(values)
        acc = 0.0
        for i in range(len(values) - 1, -1, -1):
            acc = max(acc, values[i])
            env[i] = acc
        return env

    if isinstance(points[0], PRPoint) and points[-1].n_labels > 0:
        env = suffix_max([p.precision for p in points])
        area = 0.0
        last_tp = 0
        for i, p in enumerate(points):
            area += (p.tp - last_tp) * env[i]
            last_tp = p.tp
        return area / points[-1].n_labels

    recalls = [float(p.recall if isinstance(p, PRPoint) else p[0]) for p in points]
    precisions = [float(p.precision if isinstance(p, PRPoint) else p[1]) for p in points]
    env = suffix_max(precisions)
    area = 0.0
    last_r = 0.0
    for i in range(len(points)):
        area += (recalls[i] - last_r) * env[i]
        last_r = recalls[i]
    return area


def _ap_prefix(ranked: RankedDetections, n: int) -> float:
    """AP of the top-n ranked detections (vectorized)."""
    if ranked.n_labels == 0:
        raise ValidationError("average precision needs at least one label")
    if n == 0:
        return 0.0
    tp = np.cumsum(ranked.tp_flags[:n].astype(np.int64))
    fp = np.cumsum((~ranked.tp_flags[:n]).astype(np.int64))
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    dtp = np.diff(tp, prepend=0)
    return float((dtp * envelope).sum() / ranked.n_labels)


@dataclass(frozen=True)
class SweepResult:
    optimal_confidence: float
    profile: tuple[tuple[float, float], ...]  # (tau, mean AP over classes)
    per_class: dict[str, tuple[tuple[float, float], ...]] = field(default_factory=dict)


def sweep_confidence(dets: Sequence[Detection], labels: Sequence[GroundTruthLabel],
                     iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                     grid: Sequence[float] = DEFAULT_SWEEP_GRID,
                     threads: int = 1) -> SweepResult:
    """Mean AP per confidence threshold; returns the tau maximizing it.

    Ties resolve to the smallest tau. Classes without ground-truth labels
    are excluded from the mean.

    Note that AP over a confidence-filtered set equals AP over a prefix of
    the full ranking, and dropping ranked detections can only remove recall
    or lower the precision envelope, so the profile is monotone
    non-increasing in tau. The reported optimum therefore lands on the low
    end of the maximal plateau; the top of that plateau (the largest tau
    still achieving the maximum) is where the detector starts losing true
    positives, and the full profile is returned so callers can read either.
    """
    if len(grid) == 0:
        raise ValidationError("sweep grid must not be empty")
    for tau in grid:
        if not (0.0 <= tau <= 1.0):
            raise ValidationError(f"sweep threshold {tau} outside [0, 1]")
    classes = sorted({l.cls for l in labels})
    if not classes:
        raise ValidationError("sweep needs at least one ground-truth label")
    ranked = {cls: rank_detections(dets, labels, cls, iou_threshold, threads=threads)
              for cls in classes}

    profile: list[tuple[float, float]] = []
    per_class: dict[str, list[tuple[float, float]]] = {cls: [] for cls in classes}
    best_tau, best_ap = None, -1.0
    for tau in grid:
        aps = []
        for cls in classes:
            r = ranked[cls]
            ap = _ap_prefix(r, r.prefix_for(tau))
            per_class[cls].append((float(tau), ap))
            aps.append(ap)
        mean_ap = sum(aps) / len(aps)
        profile.append((float(tau), mean_ap))
        if mean_ap > best_ap:
            best_tau, best_ap = float(tau), mean_ap
    return SweepResult(
        optimal_confidence=best_tau,
        profile=tuple(profile),
        per_class={cls: tuple(v) for cls, v in per_class.items()},
    )


def count_confusion(dets: Sequence[Detection], labels: Sequence[GroundTruthLabel],
                    image_ids: Iterable[str], cls: str = "deer",
                    confidence_threshold: float = 0.0) -> list[list[int]]:
    """Per-image count matrix: cell [gt_count][predicted_count] over all images."""
    ids = list(image_ids)
    gt_counts = {i: 0 for i in ids}
    pred_counts = {i: 0 for i in ids}
    for lab in labels:
        if lab.cls == cls and lab.image_id in gt_counts:
            gt_counts[lab.image_id] += 1
    for det in dets:
        if (det.cls == cls and det.image_id in pred_counts
                and det.confidence >= confidence_threshold):
            pred_counts[det.image_id] += 1
    rows = max(gt_counts.values(), default=0) + 1
    cols = max(pred_counts.values(), default=0) + 1
    matrix = [[0] * cols for _ in range(rows)]
    for i in ids:
        matrix[gt_counts[i]][pred_counts[i]] += 1
    return matrix


@dataclass(frozen=True)
class EvalReport:
    iou_threshold: float
    optimal_confidence: float  # sweep optimum (smallest tau of the max plateau)
    operating_confidence: float  # threshold used for PR curves and confusion
    ap: float  # mean AP over evaluated classes at the operating threshold
    per_class_ap: dict[str, float]
    pr_points: dict[str, list[PRPoint]]  # per class, at the operating threshold
    sweep: SweepResult
    count_confusion: list[list[int]]
    confusion_class: str
    n_images: int
    n_labels: int
    n_detections: int

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "optimal_confidence": self.optimal_confidence,
            "operating_confidence": self.operating_confidence,
            "ap": self.ap,
            "per_class_ap": self.per_class_ap,
            "sweep": [list(p) for p in self.sweep.profile],
            "count_confusion": self.count_confusion,
            "confusion_class": self.confusion_class,
            "n_images": self.n_images,
            "n_labels": self.n_labels,
            "n_detections": self.n_detections,
        }


def evaluate(dets: Sequence[Detection], labels: Sequence[GroundTruthLabel],
             image_ids: Iterable[str],
             iou_threshold: float = DEFAULT_IOU_THRESHOLD,
             grid: Sequence[float] = DEFAULT_SWEEP_GRID,
             confusion_class: str = "deer",
             operating_confidence: float | None = None,
             threads: int = 1) -> EvalReport:
    """Full evaluation: sweep, then PR curves and count confusion at the
    operating threshold (the sweep optimum unless one is given)."""
    ids = list(image_ids)
    sweep = sweep_confidence(dets, labels, iou_threshold, grid, threads=threads)
    tau = sweep.optimal_confidence if operating_confidence is None else operating_confidence
    classes = sorted({l.cls for l in labels})
    per_class_ap: dict[str, float] = {}
    pr_points: dict[str, list[PRPoint]] = {}
    for cls in classes:
        ranked = rank_detections(dets, labels, cls, iou_threshold, threads=threads)
        n = ranked.prefix_for(tau)
        per_class_ap[cls] = _ap_prefix(ranked, n)
        pr_points[cls] = pr_points_from_ranked(ranked, n)
    return EvalReport(
        iou_threshold=iou_threshold,
        optimal_confidence=sweep.optimal_confidence,
        operating_confidence=tau,
        ap=sum(per_class_ap.values()) / len(per_class_ap),
        per_class_ap=per_class_ap,
        pr_points=pr_points,
        sweep=sweep,
        count_confusion=count_confusion(dets, labels, ids, confusion_class, tau),
        confusion_class=confusion_class,
        n_images=len(ids),
        n_labels=len(labels),
        n_detections=len(dets),
    )
