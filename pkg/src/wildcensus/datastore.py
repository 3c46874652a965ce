"""On-disk data model: image manifests, detections, labels, split manifests.

All record streams are JSON lines. Writers emit a single header line
{"schema": "wildcensus-<name>/1"} before the records; loaders accept files
with or without it. Loaded datasets are immutable snapshots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import ValidationError
from .geometry import CameraIntrinsics, FlightPose, GeoPoint

MANIFEST_SCHEMA = "wildcensus-manifest/1"
DETECTIONS_SCHEMA = "wildcensus-detections/1"
LABELS_SCHEMA = "wildcensus-labels/1"
SPLITS_SCHEMA = "wildcensus-splits/1"
EXPORT_SCHEMA = "wildcensus-export/1"

CLASSES = ("deer", "cow", "other_animal")

BBox = tuple[float, float, float, float]  # x, y, w, h in pixels
Polygon = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    file: str
    transect_id: int
    camera_id: str
    census_eligible: bool
    pose: FlightPose | None = None

    def to_dict(self) -> dict:
        d = {
            "image_id": self.image_id,
            "file": self.file,
            "transect_id": self.transect_id,
            "camera_id": self.camera_id,
            "census_eligible": self.census_eligible,
            "lat": None, "lon": None, "alt_agl_m": None,
            "heading_deg": None, "timestamp_utc": None,
        }
        if self.pose is not None:
            d.update(lat=self.pose.position.lat, lon=self.pose.position.lon,
                     alt_agl_m=self.pose.alt_agl_m, heading_deg=self.pose.heading_deg,
                     timestamp_utc=self.pose.timestamp_utc)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        pose = None
        if d.get("lat") is not None:
            pose = FlightPose(
                position=GeoPoint(lat=d["lat"], lon=d["lon"]),
                alt_agl_m=d["alt_agl_m"],
                heading_deg=d["heading_deg"],
                timestamp_utc=d["timestamp_utc"],
            )
        rec = cls(
            image_id=str(d["image_id"]),
            file=str(d["file"]),
            transect_id=int(d["transect_id"]),
            camera_id=str(d["camera_id"]),
            census_eligible=bool(d["census_eligible"]),
            pose=pose,
        )
        if rec.census_eligible and rec.pose is None:
            raise ValidationError(
                f"image {rec.image_id} is census eligible but has no pose")
        return rec


def _check_bbox(bbox, image_id: str, size: tuple[int, int] | None) -> BBox:
    if len(bbox) != 4:
        raise ValidationError(f"image {image_id}: bbox must be [x, y, w, h]")
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise ValidationError(f"image {image_id}: bbox has non-positive size {w} x {h}")
    if size is not None:
        width, height = size
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise ValidationError(
                f"image {image_id}: bbox ({x}, {y}, {w}, {h}) exceeds "
                f"image bounds {width} x {height}")
    return (x, y, w, h)


def _check_mask(mask, image_id: str) -> Polygon | None:
    if mask is None:
        return None
    if len(mask) < 3:
        raise ValidationError(f"image {image_id}: mask polygon needs >= 3 vertices")
    return tuple((float(x), float(y)) for x, y in mask)


def _check_class(cls_name: str, image_id: str) -> str:
    if cls_name not in CLASSES:
        raise ValidationError(
            f"image {image_id}: unknown class {cls_name!r} (expected one of {CLASSES})")
    return cls_name


@dataclass(frozen=True)
class Detection:
    image_id: str
    cls: str
    bbox: BBox
    confidence: float
    mask: Polygon | None = None

    def to_dict(self) -> dict:
        d = {"image_id": self.image_id, "class": self.cls,
             "bbox": list(self.bbox), "confidence": self.confidence}
        if self.mask is not None:
            d["mask"] = [list(p) for p in self.mask]
        return d

    @classmethod
    def from_dict(cls, d: dict, size: tuple[int, int] | None = None) -> "Detection":
        image_id = str(d["image_id"])
        conf = float(d["confidence"])
        if not (0.0 <= conf <= 1.0):
            raise ValidationError(f"image {image_id}: confidence {conf} outside [0, 1]")
        return cls(
            image_id=image_id,
            cls=_check_class(d["class"], image_id),
            bbox=_check_bbox(d["bbox"], image_id, size),
            confidence=conf,
            mask=_check_mask(d.get("mask"), image_id),
        )


@dataclass(frozen=True)
class GroundTruthLabel:
    image_id: str
    cls: str
    bbox: BBox
    mask: Polygon | None = None
    observers: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {"image_id": self.image_id, "class": self.cls,
             "bbox": list(self.bbox), "observers": list(self.observers)}
        if self.mask is not None:
            d["mask"] = [list(p) for p in self.mask]
        return d

    @classmethod
    def from_dict(cls, d: dict, size: tuple[int, int] | None = None) -> "GroundTruthLabel":
        image_id = str(d["image_id"])
        return cls(
            image_id=image_id,
            cls=_check_class(d["class"], image_id),
            bbox=_check_bbox(d["bbox"], image_id, size),
            mask=_check_mask(d.get("mask"), image_id),
            observers=tuple(str(o) for o in d.get("observers", [])),
        )


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs, skipping a leading schema header."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if lineno == 1 and isinstance(obj, dict) and set(obj) == {"schema"}:
                continue
            yield lineno, obj


def write_jsonl(path: str | Path, schema: str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": schema}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> list[ImageRecord]:
    records: list[ImageRecord] = []
    seen: set[str] = set()
    for lineno, obj in read_jsonl(path):
        try:
            rec = ImageRecord.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad image record: {exc}") from exc
        if rec.image_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate image_id {rec.image_id!r}")
        seen.add(rec.image_id)
        records.append(rec)
    return records


def write_manifest(path: str | Path, records: Iterable[ImageRecord]) -> None:
    write_jsonl(path, MANIFEST_SCHEMA, (r.to_dict() for r in records))


def image_sizes(images: Iterable[ImageRecord],
                cameras: Mapping[str, CameraIntrinsics]) -> dict[str, tuple[int, int]]:
    """Map image_id to pixel dimensions via each record's camera."""
    sizes: dict[str, tuple[int, int]] = {}
    for rec in images:
        cam = cameras.get(rec.camera_id)
        if cam is None:
            raise ValidationError(f"image {rec.image_id}: unknown camera {rec.camera_id!r}")
        sizes[rec.image_id] = (cam.image_width_px, cam.image_height_px)
    return sizes


def _load_boxes(path, images, sizes, from_dict):
    known = {rec.image_id for rec in images}
    out = []
    for lineno, obj in read_jsonl(path):
        image_id = str(obj.get("image_id"))
        if image_id not in known:
            raise ValidationError(f"{path}:{lineno}: unknown image_id {image_id!r}")
        try:
            out.append(from_dict(obj, sizes.get(image_id)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad record: {exc}") from exc
    return out


def load_detections(path: str | Path, images: Iterable[ImageRecord],
                    sizes: Mapping[str, tuple[int, int]]) -> list[Detection]:
    return _load_boxes(path, images, sizes, Detection.from_dict)


def load_labels(path: str | Path, images: Iterable[ImageRecord],
                sizes: Mapping[str, tuple[int, int]]) -> list[GroundTruthLabel]:
    return _load_boxes(path, images, sizes, GroundTruthLabel.from_dict)


def write_detections(path: str | Path, records: Iterable[Detection]) -> None:
    write_jsonl(path, DETECTIONS_SCHEMA, (r.to_dict() for r in records))


def write_labels(path: str | Path, records: Iterable[GroundTruthLabel]) -> None:
    write_jsonl(path, LABELS_SCHEMA, (r.to_dict() for r in records))


def images_by_class(labels: Iterable[GroundTruthLabel]) -> dict[str, set[str]]:
    """Image ids that contain at least one label of each class."""
    out: dict[str, set[str]] = {c: set() for c in CLASSES}
    for lab in labels:
        out[lab.cls].add(lab.image_id)
    return out


def categorize_images(images: Iterable[ImageRecord],
                      labels: Iterable[GroundTruthLabel]) -> dict[str, list[str]]:
    """Partition image ids into deer / cow / other / empty, by priority."""
    by_class = images_by_class(labels)
    out: dict[str, list[str]] = {"deer": [], "cow": [], "other": [], "empty": []}
    for rec in images:
        if rec.image_id in by_class["deer"]:
            out["deer"].append(rec.image_id)
        elif rec.image_id in by_class["cow"]:
            out["cow"].append(rec.image_id)
        elif rec.image_id in by_class["other_animal"]:
            out["other"].append(rec.image_id)
        else:
            out["empty"].append(rec.image_id)
    return out


PER_TRANSECT = "per_transect"


@dataclass(frozen=True)
class CategoryQuota:
    deer: int = 0
    cow: int = 0
    other: int = 0
    empty: int | str = 0  # count, or "per_transect" for one empty per transect


@dataclass(frozen=True)
class SplitSpec:
    train: CategoryQuota
    val: CategoryQuota
    test: CategoryQuota

    def items(self) -> list[tuple[str, CategoryQuota]]:
        return [("train", self.train), ("val", self.val), ("test", self.test)]


def survey_split_spec() -> SplitSpec:
    """Canonical dataset split: 140/46/46 deer, 54/17/17 cow, 3 other in
    train, and one empty image per transect in every split."""
    return SplitSpec(
        train=CategoryQuota(deer=140, cow=54, other=3, empty=PER_TRANSECT),
        val=CategoryQuota(deer=46, cow=17, other=0, empty=PER_TRANSECT),
        test=CategoryQuota(deer=46, cow=17, other=0, empty=PER_TRANSECT),
    )


@dataclass(frozen=True)
class SplitManifest:
    split: str
    ids: dict[str, list[str]]  # category -> image ids
    seed: int

    def all_ids(self) -> set[str]:
        return {i for ids in self.ids.values() for i in ids}


def make_splits(images: list[ImageRecord], labels: list[GroundTruthLabel],
                spec: SplitSpec, seed: int,
                allow_empty_reuse: bool = False) -> dict[str, SplitManifest]:
    """Seeded shuffle-then-partition of images into train/val/test.

    Positive categories draw spec counts from a per-category shuffle; the
    empty category can instead draw one image per transect per split
    (distinct picks unless allow_empty_reuse).
    """
    import random as _random

    rng = _random.Random(seed)
    cats = categorize_images(images, labels)
    splits: dict[str, SplitManifest] = {}
    pools = {c: sorted(cats[c]) for c in ("deer", "cow", "other")}
    for pool in pools.values():
        rng.shuffle(pool)
    cursors = {c: 0 for c in pools}

    per_transect_empty: dict[int, list[str]] = {}
    by_transect: dict[int, list[str]] = {}
    empty_set = set(cats["empty"])
    for rec in images:
        if rec.image_id in empty_set:
            by_transect.setdefault(rec.transect_id, []).append(rec.image_id)
    for tid in sorted(by_transect):
        ids = sorted(by_transect[tid])
        rng.shuffle(ids)
        per_transect_empty[tid] = ids

    empty_pool = sorted(cats["empty"])
    rng.shuffle(empty_pool)
    empty_cursor = 0

    for index, (name, quota) in enumerate(spec.items()):
        ids: dict[str, list[str]] = {}
        for cat in ("deer", "cow", "other"):
            want = getattr(quota, cat)
            have = len(pools[cat]) - cursors[cat]
            if want > have:
                raise ValidationError(
                    f"split {name!r} needs {want} {cat} images, only {have} remain")
            ids[cat] = pools[cat][cursors[cat]:cursors[cat] + want]
            cursors[cat] += want
        if quota.empty == PER_TRANSECT:
            picks: list[str] = []
            offset = 0 if allow_empty_reuse else index
            for tid in sorted(per_transect_empty):
                options = per_transect_empty[tid]
                if offset >= len(options):
                    raise ValidationError(
                        f"transect {tid} has only {len(options)} empty image(s); "
                        f"split {name!r} needs a distinct one")
                picks.append(options[offset])
            ids["empty"] = picks
        else:
            want = int(quota.empty)
            have = len(empty_pool) - empty_cursor
            if want > have:
                raise ValidationError(
                    f"split {name!r} needs {want} empty images, only {have} remain")
            ids["empty"] = empty_pool[empty_cursor:empty_cursor + want]
            empty_cursor += want
        splits[name] = SplitManifest(split=name, ids=ids, seed=seed)

    _check_disjoint(splits, allow_empty_reuse=allow_empty_reuse)
    return splits


def _check_disjoint(splits: Mapping[str, SplitManifest],
                    allow_empty_reuse: bool = False) -> None:
    seen: dict[str, str] = {}
    for name, manifest in splits.items():
        for category, ids in manifest.ids.items():
            if category == "empty" and allow_empty_reuse:
                continue
            for image_id in ids:
                if image_id in seen:
                    raise ValidationError(
                        f"image {image_id} appears in splits "
                        f"{seen[image_id]!r} and {name!r}")
                seen[image_id] = name


def write_splits(path: str | Path, splits: Mapping[str, SplitManifest],
                 allow_empty_reuse: bool = False) -> None:
    doc = {
        "schema": SPLITS_SCHEMA,
        "seed": next(iter(splits.values())).seed if splits else 0,
        "empty_reuse": allow_empty_reuse,
        "splits": {name: m.ids for name, m in splits.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def load_splits(path: str | Path) -> dict[str, SplitManifest]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != SPLITS_SCHEMA:
        raise ValidationError(f"expected {SPLITS_SCHEMA}, got {doc.get('schema')!r}")
    splits = {name: SplitManifest(split=name, ids=ids, seed=doc["seed"])
              for name, ids in doc["splits"].items()}
    _check_disjoint(splits, allow_empty_reuse=doc.get("empty_reuse", False))
    return splits


def export_training_set(split: SplitManifest, labels: list[GroundTruthLabel],
                        images: list[ImageRecord],
                        sizes: Mapping[str, tuple[int, int]],
                        out_dir: str | Path) -> dict:
    """Write one polygon-annotation file per image plus export metadata.

    Annotation lines are "<class_index> x1 y1 x2 y2 ..." with vertices
    normalized by the image dimensions. Deer labels must carry masks;
    other classes fall back to their bbox rectangle.
    """
    out = Path(out_dir)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    by_image: dict[str, list[GroundTruthLabel]] = {}
    for lab in labels:
        by_image.setdefault(lab.image_id, []).append(lab)
    image_files = {rec.image_id: rec.file for rec in images}

    split_ids = [i for ids in split.ids.values() for i in ids]
    missing_masks = sorted(
        lab.image_id
        for image_id in split_ids
        for lab in by_image.get(image_id, [])
        if lab.cls == "deer" and lab.mask is None)
    if missing_masks:
        raise ValidationError(
            f"deer labels without masks on image(s): {', '.join(missing_masks)}")

    class_index = {c: i for i, c in enumerate(CLASSES)}
    counts = {cat: 0 for cat in split.ids}
    for cat, ids in split.ids.items():
        for image_id in ids:
            if image_id not in sizes:
                raise ValidationError(f"no image dimensions for {image_id}")
            width, height = sizes[image_id]
            lines = []
            for lab in by_image.get(image_id, []):
                poly = lab.mask
                if poly is None:
                    x, y, w, h = lab.bbox
                    poly = ((x, y), (x + w, y), (x + w, y + h), (x, y + h))
                coords = " ".join(
                    f"{px / width:.6f} {py / height:.6f}" for px, py in poly)
                lines.append(f"{class_index[lab.cls]} {coords}")
            (out / "annotations" / f"{image_id}.txt").write_text(
                "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
            counts[cat] += 1

    (out / "classes.txt").write_text("\n".join(CLASSES) + "\n", encoding="utf-8")
    meta = {
        "schema": EXPORT_SCHEMA,
        "split": split.split,
        "seed": split.seed,
        "counts": counts,
        "classes": list(CLASSES),
        # training-time constraint honored by the downstream model config
        "instances_do_not_overlap": True,
        "image_files": {i: image_files.get(i) for i in sorted(split_ids)},
    }
    (out / "export.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n",
                                     encoding="utf-8")
    return meta
