"""Event-sourced dual-observer verification service.

Every census-eligible photograph must be reviewed by two independent
observers before it counts; disagreements go to expert adjudication.
All state lives in an append-only event log with strictly increasing
sequence numbers, so replaying the log reproduces the live state exactly.
Mutations are serialized through one lock (single writer); reads take
immutable snapshots.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .datastore import BBox, Detection, ImageRecord
from .errors import CorruptLogError, ValidationError
from .evaluation import DEFAULT_IOU_THRESHOLD, iou

EVENTS_FILENAME = "events.jsonl"
EVENT_KINDS = ("task_created", "leased", "lease_expired", "verdict_submitted",
               "adjudicated")
ACTIONS = ("confirm_model", "reject_model", "add_manual")
DEFAULT_LEASE_TTL_S = 15 * 60.0

STATE_PENDING = "pending"
STATE_LEASED = "leased"
STATE_SINGLE = "single_reviewed"
STATE_DOUBLE = "double_reviewed"
STATE_CONFLICT = "conflict"
STATE_ADJUDICATED = "adjudicated"


@dataclass(frozen=True)
class CandidateBox:
    candidate_id: str
    cls: str
    bbox: BBox
    confidence: float

    def to_dict(self) -> dict:
        return {"candidate_id": self.candidate_id, "class": self.cls,
                "bbox": list(self.bbox), "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateBox":
        return cls(candidate_id=d["candidate_id"], cls=d["class"],
                   bbox=tuple(d["bbox"]), confidence=d["confidence"])


@dataclass(frozen=True)
class BoxDecision:
    bbox: BBox
    cls: str
    action: str  # confirm_model | reject_model | add_manual
    candidate_id: str | None = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValidationError(f"unknown box action {self.action!r}")
        if self.action in ("confirm_model", "reject_model") and not self.candidate_id:
            raise ValidationError(f"{self.action} requires a candidate_id")

    @property
    def counted(self) -> bool:
        """Whether this decision asserts an animal is present."""
        return self.action != "reject_model"

    def to_dict(self) -> dict:
        return {"bbox": list(self.bbox), "class": self.cls, "action": self.action,
                "candidate_id": self.candidate_id}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxDecision":
        return cls(bbox=tuple(d["bbox"]), cls=d["class"], action=d["action"],
                   candidate_id=d.get("candidate_id"))


@dataclass(frozen=True)
class Verdict:
    verdict_id: str
    image_id: str
    observer_id: str
    boxes: tuple[BoxDecision, ...]
    declared_empty: bool
    duration_s: float
    submitted_at: float
    adjudication: bool = False

    def __post_init__(self):
        if self.declared_empty == bool(self.boxes):
            raise ValidationError(
                "a verdict either declares the image empty or carries box "
                "decisions, never both or neither")

    def counted_boxes(self) -> list[BoxDecision]:
        return [b for b in self.boxes if b.counted]

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for b in self.counted_boxes():
            counts[b.cls] = counts.get(b.cls, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "verdict_id": self.verdict_id,
            "image_id": self.image_id,
            "observer_id": self.observer_id,
            "boxes": [b.to_dict() for b in self.boxes],
            "declared_empty": self.declared_empty,
            "duration_s": self.duration_s,
            "submitted_at": self.submitted_at,
            "adjudication": self.adjudication,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            verdict_id=d["verdict_id"],
            image_id=d["image_id"],
            observer_id=d["observer_id"],
            boxes=tuple(BoxDecision.from_dict(b) for b in d.get("boxes", [])),
            declared_empty=d["declared_empty"],
            duration_s=d.get("duration_s", 0.0),
            submitted_at=d.get("submitted_at", 0.0),
            adjudication=d.get("adjudication", False),
        )


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    at: float
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "at": self.at,
                "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        if d["kind"] not in EVENT_KINDS:
            raise CorruptLogError(f"unknown event kind {d['kind']!r}")
        return cls(seq=d["seq"], kind=d["kind"], at=d["at"], payload=d["payload"])


def _max_bipartite_match(adjacency: list[list[int]], n_right: int) -> int:
    """Size of a maximum matching (augmenting paths); symmetric in the sides."""
    match_right = [-1] * n_right

    def augment(u: int, seen: list[bool]) -> bool:
        for v in adjacency[u]:
            if not seen[v]:
                seen[v] = True
                if match_right[v] == -1 or augment(match_right[v], seen):
                    match_right[v] = u
                    return True
        return False

    size = 0
    for u in range(len(adjacency)):
        if augment(u, [False] * n_right):
            size += 1
    return size


def verdicts_agree(a: Verdict, b: Verdict,
                   iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> bool:
    """Same per-class counts plus a full one-to-one box correspondence.

    Uses a maximum bipartite matching on the IoU adjacency, so the check is
    symmetric in its arguments.
    """
    counts_a, counts_b = a.class_counts(), b.class_counts()
    if counts_a != counts_b:
        return False
    for cls in counts_a:
        boxes_a = [x for x in a.counted_boxes() if x.cls == cls]
        boxes_b = [x for x in b.counted_boxes() if x.cls == cls]
        adjacency = [
            [j for j, other in enumerate(boxes_b)
             if iou(mine.bbox, other.bbox) >= iou_threshold]
            for mine in boxes_a
        ]
        if _max_bipartite_match(adjacency, len(boxes_b)) != len(boxes_a):
            return False
    return True


@dataclass
class ReviewTask:
    """Mutable task state folded from events."""

    image_id: str
    created_seq: int
    candidates: tuple[CandidateBox, ...] = ()
    reviews: list[Verdict] = field(default_factory=list)
    lease: tuple[str, float] | None = None  # (observer_id, expires_at)
    conflict: bool = False
    adjudication: Verdict | None = None

    def reviewed_by(self) -> set[str]:
        return {v.observer_id for v in self.reviews}

    def state(self, now: float | None = None) -> str:
        if self.adjudication is not None:
            return STATE_ADJUDICATED
        if self.conflict:
            return STATE_CONFLICT
        if len(self.reviews) >= 2:
            return STATE_DOUBLE
        if self.lease is not None and (now is None or self.lease[1] > now):
            return STATE_LEASED
        return STATE_SINGLE if len(self.reviews) == 1 else STATE_PENDING

    def counting_verdicts(self) -> list[Verdict]:
        """Verdicts the census may consume: adjudication overrides reviews."""
        if self.adjudication is not None:
            return [self.adjudication]
        return list(self.reviews)

    def to_dict(self, now: float | None = None) -> dict:
        return {
            "image_id": self.image_id,
            "state": self.state(now),
            "candidates": [c.to_dict() for c in self.candidates],
            "completed_reviews": [
                {"observer_id": v.observer_id, "verdict_id": v.verdict_id}
                for v in self.reviews
            ],
            "lease": None if self.lease is None else
                {"observer_id": self.lease[0], "expires_at": self.lease[1]},
            "adjudicated": self.adjudication is not None,
        }


class ReviewService:
    """Single-writer review queue over an append-only event log."""

    def __init__(self, images: Iterable[ImageRecord] = (),
                 store_dir: str | Path | None = None,
                 lease_ttl_s: float = DEFAULT_LEASE_TTL_S,
                 iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                 clock: Callable[[], float] = time.time):
        self._lock = threading.RLock()
        self._images = {rec.image_id: rec for rec in images}
        self._tasks: dict[str, ReviewTask] = {}
        self._events: list[Event] = []
        self._lease_ttl_s = lease_ttl_s
        self._iou_threshold = iou_threshold
        self._clock = clock
        self._store_path: Path | None = None
        if store_dir is not None:
            store = Path(store_dir)
            store.mkdir(parents=True, exist_ok=True)
            self._store_path = store / EVENTS_FILENAME
            if self._store_path.exists():
                for event in read_event_log(self._store_path):
                    self._check_next_seq(event)
                    self._apply(event)
                    self._events.append(event)

    # -- event plumbing ----------------------------------------------------

    @property
    def events(self) -> tuple[Event, ...]:
        with self._lock:
            return tuple(self._events)

    @property
    def images(self) -> dict[str, ImageRecord]:
        return dict(self._images)

    def _check_next_seq(self, event: Event) -> None:
        expected = len(self._events) + 1
        if event.seq != expected:
            raise CorruptLogError(
                f"event sequence corrupt: expected {expected}, got {event.seq}")

    def _emit(self, kind: str, payload: dict) -> Event:
        event = Event(seq=len(self._events) + 1, kind=kind, at=self._clock(),
                      payload=payload)
        self._apply(event)
        self._events.append(event)
        if self._store_path is not None:
            with open(self._store_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
        return event

    def _apply(self, event: Event) -> None:
        payload = event.payload
        if event.kind == "task_created":
            task = ReviewTask(
                image_id=payload["image_id"],
                created_seq=event.seq,
                candidates=tuple(CandidateBox.from_dict(c)
                                 for c in payload.get("candidates", [])),
            )
            self._tasks[task.image_id] = task
        elif event.kind == "leased":
            task = self._tasks[payload["image_id"]]
            task.lease = (payload["observer_id"], payload["expires_at"])
        elif event.kind == "lease_expired":
            task = self._tasks[payload["image_id"]]
            task.lease = None
        elif event.kind == "verdict_submitted":
            task = self._tasks[payload["image_id"]]
            verdict = Verdict.from_dict(payload["verdict"])
            task.reviews.append(verdict)
            task.lease = None
            if len(task.reviews) == 2:
                task.conflict = not verdicts_agree(
                    task.reviews[0], task.reviews[1], self._iou_threshold)
        elif event.kind == "adjudicated":
            task = self._tasks[payload["image_id"]]
            task.adjudication = Verdict.from_dict(payload["verdict"])
        else:  # pragma: no cover - from_dict rejects unknown kinds
            raise CorruptLogError(f"unknown event kind {event.kind!r}")

    # -- operations ---------------------------------------------------------

    def seed_tasks(self, image_ids: Sequence[str],
                   detections: Sequence[Detection] = (),
                   tau: float = 0.0) -> int:
        """Create one task per image, attaching model candidates at conf >= tau.

        Candidates ride in the task_created payload, so seeding happens at
        task creation; re-seeding an existing task is an error.
        """
        with self._lock:
            by_image: dict[str, list[Detection]] = {}
            for det in detections:
                if self._images and det.image_id not in self._images:
                    raise ValidationError(f"unknown image_id {det.image_id!r}")
                if det.confidence >= tau:
                    by_image.setdefault(det.image_id, []).append(det)
            for image_id in image_ids:
                if self._images and image_id not in self._images:
                    raise ValidationError(f"unknown image_id {image_id!r}")
                if image_id in self._tasks:
                    raise ValidationError(f"task already exists for {image_id!r}")
            for image_id in image_ids:
                cands = sorted(by_image.get(image_id, []),
                               key=lambda d: (-d.confidence, d.bbox[0], d.bbox[1]))
                payload = {
                    "image_id": image_id,
                    "candidates": [
                        CandidateBox(candidate_id=f"{image_id}/c{i}", cls=d.cls,
                                     bbox=d.bbox, confidence=d.confidence).to_dict()
                        for i, d in enumerate(cands)
                    ],
                }
                self._emit("task_created", payload)
            return len(image_ids)

    def lease_next(self, observer_id: str) -> dict | None:
        """Oldest reviewable task not yet reviewed by this observer, leased."""
        if not observer_id:
            raise ValidationError("observer_id must be non-empty")
        with self._lock:
            now = self._clock()
            for task in self._tasks.values():
                if task.adjudication is not None or task.conflict:
                    continue
                if len(task.reviews) >= 2:
                    continue
                if observer_id in task.reviewed_by():
                    continue
                if task.lease is not None:
                    holder, expires_at = task.lease
                    if expires_at > now:
                        if holder == observer_id:
                            return self._task_view(task)
                        continue
                    self._emit("lease_expired", {"image_id": task.image_id,
                                                 "expired_holder": holder})
                self._emit("leased", {
                    "image_id": task.image_id,
                    "observer_id": observer_id,
                    "expires_at": now + self._lease_ttl_s,
                })
                return self._task_view(task)
            return None

    def submit_verdict(self, verdict: Verdict) -> dict:
        with self._lock:
            task = self._task(verdict.image_id)
            now = self._clock()
            state = task.state(now)
            if state in (STATE_DOUBLE, STATE_CONFLICT, STATE_ADJUDICATED):
                raise ValidationError(
                    f"task {task.image_id} is {state}; no further reviews accepted")
            if verdict.observer_id in task.reviewed_by():
                raise ValidationError(
                    f"observer {verdict.observer_id!r} already reviewed "
                    f"{task.image_id}; the second review must be independent")
            if task.lease is not None:
                holder, expires_at = task.lease
                if expires_at > now and holder != verdict.observer_id:
                    raise ValidationError(
                        f"task {task.image_id} is leased to {holder!r}")
                if expires_at <= now:
                    self._emit("lease_expired", {"image_id": task.image_id,
                                                 "expired_holder": holder})
            self._check_candidate_refs(task, verdict)
            self._emit("verdict_submitted", {"image_id": task.image_id,
                                             "verdict": verdict.to_dict()})
            return self._task_view(task)

    def adjudicate(self, image_id: str, verdict: Verdict) -> dict:
        with self._lock:
            task = self._task(image_id)
            if task.state(self._clock()) != STATE_CONFLICT:
                raise ValidationError(
                    f"task {image_id} is not in conflict; nothing to adjudicate")
            expert = replace(verdict, adjudication=True)
            self._check_candidate_refs(task, expert)
            self._emit("adjudicated", {"image_id": image_id,
                                       "verdict": expert.to_dict()})
            return self._task_view(task)

    def _check_candidate_refs(self, task: ReviewTask, verdict: Verdict) -> None:
        if verdict.image_id != task.image_id:
            raise ValidationError("verdict image_id does not match the task")
        known = {c.candidate_id for c in task.candidates}
        for box in verdict.boxes:
            if box.candidate_id is not None and box.candidate_id not in known:
                raise ValidationError(
                    f"verdict references unknown candidate {box.candidate_id!r}")

    def _task(self, image_id: str) -> ReviewTask:
        task = self._tasks.get(image_id)
        if task is None:
            raise ValidationError(f"no task for image {image_id!r}")
        return task

    def _task_view(self, task: ReviewTask) -> dict:
        view = task.to_dict(self._clock())
        record = self._images.get(task.image_id)
        view["file"] = record.file if record else None
        return view

    # -- reads ---------------------------------------------------------------

    def get_task(self, image_id: str) -> dict:
        with self._lock:
            return self._task_view(self._task(image_id))

    def counting_verdicts(self) -> list[Verdict]:
        """All verdicts the census may consume, in task order."""
        with self._lock:
            out: list[Verdict] = []
            for task in self._tasks.values():
                out.extend(task.counting_verdicts())
            return out

    def state_dict(self) -> dict:
        """Canonical serializable state, for replay equivalence checks."""
        with self._lock:
            return {
                "seq": len(self._events),
                "tasks": {
                    image_id: {
                        "candidates": [c.to_dict() for c in t.candidates],
                        "reviews": [v.to_dict() for v in t.reviews],
                        "lease": list(t.lease) if t.lease else None,
                        "conflict": t.conflict,
                        "adjudication": (t.adjudication.to_dict()
                                         if t.adjudication else None),
                    }
                    for image_id, t in sorted(self._tasks.items())
                },
            }

    def stats(self) -> dict:
        with self._lock:
            now = self._clock()
            depths = {s: 0 for s in (STATE_PENDING, STATE_LEASED, STATE_SINGLE,
                                     STATE_DOUBLE, STATE_CONFLICT, STATE_ADJUDICATED)}
            per_observer: dict[str, dict[str, float]] = {}
            agreements = disagreements = 0
            for task in self._tasks.values():
                depths[task.state(now)] += 1
                if len(task.reviews) >= 2:
                    if task.conflict:
                        disagreements += 1
                    else:
                        agreements += 1
                for v in task.reviews:
                    entry = per_observer.setdefault(
                        v.observer_id, {"verdicts": 0, "total_duration_s": 0.0})
                    entry["verdicts"] += 1
                    entry["total_duration_s"] += v.duration_s
            decided = agreements + disagreements
            return {
                "queue_depths": depths,
                "tasks": len(self._tasks),
                "events": len(self._events),
                "agreement_rate": (agreements / decided) if decided else None,
                "per_observer": per_observer,
            }


def read_event_log(path: str | Path) -> list[Event]:
    events: list[Event] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(Event.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorruptLogError(f"{path}:{lineno}: bad event: {exc}") from exc
    return events


def replay(events: Sequence[Event], images: Iterable[ImageRecord] = (),
           lease_ttl_s: float = DEFAULT_LEASE_TTL_S,
           iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> ReviewService:
    """Deterministic fold of an event log into a fresh service.

    Sequence numbers must be contiguous from 1; gaps and duplicates raise
    CorruptLogError.
    """
    service = ReviewService(images=images, lease_ttl_s=lease_ttl_s,
                            iou_threshold=iou_threshold)
    for event in events:
        service._check_next_seq(event)
        service._apply(event)
        service._events.append(event)
    return service
