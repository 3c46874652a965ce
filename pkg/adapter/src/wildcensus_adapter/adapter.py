"""Run a detector over an image manifest and emit detections.jsonl.

The adapter owns none of the analysis: it loads images named by a
wildcensus manifest, hands them to a detector backend, and writes records
conforming to the wildcensus-detections/1 schema. Emission happens at a
very low confidence floor so downstream threshold sweeps keep their full
range; all thresholding is the evaluation toolkit's job.

Backends are chosen by the weights file:

- ``*.pt``  - an ultralytics YOLO segmentation model (optional extra).
- ``*.json``- a deterministic intensity-blob detector, used for synthetic
  placeholder imagery and tests; the JSON file carries its thresholds.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol

import numpy as np
from PIL import Image

log = logging.getLogger("wildcensus_adapter")

DETECTIONS_SCHEMA = "wildcensus-detections/1"
MANIFEST_SCHEMA_PREFIX = "wildcensus-manifest/"
CLASSES = ("deer", "cow", "other_animal")


class AdapterError(Exception):
    """Configuration or input problem that must abort the run."""


@dataclass(frozen=True)
class AdapterConfig:
    weights: str
    imgsz: int = 1280
    batch_size: int = 16
    # emission floor stays below any analysis threshold so sweeps see everything
    confidence_floor: float = 0.01
    image_root: str | None = None

    def __post_init__(self):
        if self.imgsz <= 0:
            raise AdapterError(f"imgsz must be > 0, got {self.imgsz}")
        if not (0.0 <= self.confidence_floor < 1.0):
            raise AdapterError(
                f"confidence floor {self.confidence_floor} outside [0, 1)")


@dataclass(frozen=True)
class RawDetection:
    cls: str
    bbox: tuple[float, float, float, float]  # x, y, w, h in imgsz space
    confidence: float
    mask: tuple[tuple[float, float], ...] | None = None


class Backend(Protocol):
    def detect(self, image: np.ndarray) -> list[RawDetection]:
        """Detect on one imgsz x imgsz grayscale/RGB array."""


class BlobBackend:
    """Deterministic dark-blob detector for flat synthetic imagery.

    Weights JSON: {"kind": "intensity-blob", "threshold": 110,
    "min_area_px": 4, "class": "deer"}. Pixels darker than the threshold
    form connected components; each component becomes one detection whose
    confidence grows with its contrast against the background.
    """

    def __init__(self, params: dict):
        if params.get("kind") != "intensity-blob":
            raise AdapterError(
                f"unsupported blob weights kind {params.get('kind')!r}")
        self.threshold = float(params.get("threshold", 110))
        self.min_area_px = int(params.get("min_area_px", 4))
        self.cls = params.get("class", "deer")
        if self.cls not in CLASSES:
            raise AdapterError(f"unknown class {self.cls!r}")

    def detect(self, image: np.ndarray) -> list[RawDetection]:
        from scipy import ndimage

        gray = image if image.ndim == 2 else image.mean(axis=2)
        mask = gray < self.threshold
        if not mask.any():
            return []
        labeled, count = ndimage.label(mask)
        background = float(gray[~mask].mean()) if (~mask).any() else 255.0
        out: list[RawDetection] = []
        for sl in ndimage.find_objects(labeled):
            ys, xs = sl
            w = float(xs.stop - xs.start)
            h = float(ys.stop - ys.start)
            if w * h < self.min_area_px:
                continue
            blob = gray[sl][labeled[sl] > 0]
            contrast = max(0.0, background - float(blob.mean())) / 255.0
            confidence = min(0.99, round(0.25 + 0.7 * contrast, 6))
            x, y = float(xs.start), float(ys.start)
            out.append(RawDetection(
                cls=self.cls,
                bbox=(x, y, w, h),
                confidence=confidence,
                mask=((x, y), (x + w, y), (x + w, y + h), (x, y + h)),
            ))
        out.sort(key=lambda d: (d.bbox[1], d.bbox[0]))
        return out


class YoloBackend:
    """ultralytics YOLO segmentation weights (.pt)."""

    def __init__(self, weights: Path, imgsz: int):
        try:
            from ultralytics import YOLO
        except ImportError as exc:
            raise AdapterError(
                "ultralytics is not installed; install the 'yolo' extra to "
                "run .pt weights") from exc
        try:
            self.model = YOLO(str(weights))
        except Exception as exc:
            raise AdapterError(f"cannot load weights {weights}: {exc}") from exc
        self.imgsz = imgsz

    def detect(self, image: np.ndarray) -> list[RawDetection]:
        results = self.model.predict(image, imgsz=self.imgsz, conf=0.0,
                                     verbose=False, deterministic=True)
        out: list[RawDetection] = []
        for result in results:
            names = result.names
            boxes = result.boxes
            polys = (result.masks.xy if getattr(result, "masks", None) is not None
                     else [None] * len(boxes))
            for box, poly in zip(boxes, polys):
                x0, y0, x1, y1 = (float(v) for v in box.xyxy[0])
                name = names[int(box.cls[0])]
                out.append(RawDetection(
                    cls=name if name in CLASSES else "other_animal",
                    bbox=(x0, y0, x1 - x0, y1 - y0),
                    confidence=float(box.conf[0]),
                    mask=tuple((float(px), float(py)) for px, py in poly)
                    if poly is not None and len(poly) >= 3 else None,
                ))
        out.sort(key=lambda d: (d.bbox[1], d.bbox[0]))
        return out


def load_backend(config: AdapterConfig) -> Backend:
    weights = Path(config.weights)
    if not weights.exists():
        raise AdapterError(f"weights file not found: {weights}")
    if weights.suffix == ".pt":
        return YoloBackend(weights, config.imgsz)
    if weights.suffix == ".json":
        try:
            params = json.loads(weights.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise AdapterError(f"invalid weights JSON {weights}: {exc}") from exc
        return BlobBackend(params)
    raise AdapterError(f"unsupported weights format: {weights.suffix!r}")


def read_manifest(path: Path) -> Iterator[dict]:
    """Minimal reader for wildcensus-manifest/1 JSON lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if lineno == 1 and set(obj) == {"schema"}:
                if not str(obj["schema"]).startswith(MANIFEST_SCHEMA_PREFIX):
                    raise AdapterError(
                        f"{path}: expected a {MANIFEST_SCHEMA_PREFIX}* file, "
                        f"got {obj['schema']!r}")
                continue
            if "image_id" not in obj or "file" not in obj:
                raise AdapterError(f"{path}:{lineno}: record lacks image_id/file")
            yield obj


def infer_manifest(config: AdapterConfig, manifest_path: str | Path,
                   out_path: str | Path) -> dict:
    """Run the detector over every manifest image; returns run counters.

    Unreadable images are skipped and logged with their image_id; the
    output file carries one record per detection at or above the emission
    floor, in manifest order, deterministically.
    """
    manifest_path = Path(manifest_path)
    backend = load_backend(config)
    root = Path(config.image_root) if config.image_root else manifest_path.parent

    counters = {"images": 0, "skipped": 0, "detections": 0}
    records: list[str] = [json.dumps({"schema": DETECTIONS_SCHEMA}, sort_keys=True)]
    for rec in read_manifest(manifest_path):
        counters["images"] += 1
        image_path = Path(rec["file"])
        if not image_path.is_absolute():
            image_path = root / image_path
        try:
            with Image.open(image_path) as img:
                width, height = img.size
                resized = img.convert("L").resize(
                    (config.imgsz, config.imgsz), Image.Resampling.BILINEAR)
                array = np.asarray(resized, dtype=np.float64)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s (%s): %s",
                        rec["image_id"], image_path, exc)
            counters["skipped"] += 1
            continue
        sx, sy = width / config.imgsz, height / config.imgsz
        for det in backend.detect(array):
            if det.confidence < config.confidence_floor:
                continue
            x, y, w, h = det.bbox
            bbox = _clamp_bbox(x * sx, y * sy, w * sx, h * sy, width, height)
            if bbox is None:
                continue
            doc = {
                "image_id": rec["image_id"],
                "class": det.cls,
                "bbox": [round(v, 3) for v in bbox],
                "confidence": det.confidence,
            }
            if det.mask is not None:
                doc["mask"] = [
                    [round(min(max(px * sx, 0.0), width), 3),
                     round(min(max(py * sy, 0.0), height), 3)]
                    for px, py in det.mask
                ]
            records.append(json.dumps(doc, sort_keys=True))
            counters["detections"] += 1
    Path(out_path).write_text("\n".join(records) + "\n", encoding="utf-8")
    return counters


def _clamp_bbox(x, y, w, h, width, height):
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(width), x + w), min(float(height), y + h)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)
