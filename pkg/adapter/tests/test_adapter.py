import json
import subprocess
import sys
from pathlib import Path

import pytest
from PIL import Image

from wildcensus_adapter.adapter import AdapterConfig, AdapterError, infer_manifest
from wildcensus_adapter.cli import main


def run_primary_cli(*args) -> subprocess.CompletedProcess:
    """Drive the main toolkit through its command line (external interface)."""
    return subprocess.run([sys.executable, "-m", "wildcensus.cli", *args],
                          capture_output=True, text=True)


def write_weights(path: Path, threshold=110) -> Path:
    path.write_text(json.dumps({"kind": "intensity-blob", "threshold": threshold,
                                "min_area_px": 4, "class": "deer"}))
    return path


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory) -> Path:
    """A 10-image synthetic manifest with placeholder imagery."""
    out = tmp_path_factory.mktemp("synthfix")
    spec = {"seed": 17, "area_width_m": 200.0, "area_height_m": 800.0,
            "deer_count": 3, "min_spacing_m": 60.0, "min_transect_m": 700.0,
            "grid_cell_ns_m": 800.0}
    spec_path = out / "scenario.json"
    spec_path.write_text(json.dumps(spec))
    proc = run_primary_cli("synth", "--spec", str(spec_path),
                           "--out", str(out / "fixture"), "--write-images")
    assert proc.returncode == 0, proc.stderr

    # slice the manifest down to exactly 10 images
    src = (out / "fixture" / "manifest.jsonl").read_text().splitlines()
    header, records = src[0], src[1:]
    assert len(records) >= 10
    (out / "fixture" / "manifest10.jsonl").write_text(
        "\n".join([header] + records[:10]) + "\n")
    return out / "fixture"


class TestInference:
    def test_ten_image_manifest_validates_and_is_deterministic(
            self, fixture_dir, tmp_path):
        weights = write_weights(tmp_path / "weights.json")
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        for out in (out_a, out_b):
            code = main(["--weights", str(weights),
                         "--manifest", str(fixture_dir / "manifest10.jsonl"),
                         "--out", str(out), "--imgsz", "1280"])
            assert code == 0
        assert out_a.read_bytes() == out_b.read_bytes()

        proc = run_primary_cli("ingest",
                               "--manifest", str(fixture_dir / "manifest10.jsonl"),
                               "--detections", str(out_a))
        assert proc.returncode == 0, proc.stderr
        summary = json.loads(proc.stdout)
        assert summary["images"] == 10

    def test_planted_blobs_are_found(self, fixture_dir, tmp_path):
        weights = write_weights(tmp_path / "weights.json")
        out = tmp_path / "det.jsonl"
        assert main(["--weights", str(weights),
                     "--manifest", str(fixture_dir / "manifest.jsonl"),
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        detections = [json.loads(l) for l in lines[1:]]
        labels = [json.loads(l)
                  for l in (fixture_dir / "labels.jsonl").read_text().splitlines()[1:]]
        assert len(detections) > 0
        # every labeled image should yield at least one blob detection
        assert {d["image_id"] for d in detections} >= {l["image_id"] for l in labels}
        for d in detections:
            assert d["class"] == "deer"
            assert 0.01 <= d["confidence"] <= 1.0

    def test_blank_image_yields_nothing(self, tmp_path):
        Image.new("L", (1296, 864), 168).save(tmp_path / "blank.png")
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(
            json.dumps({"schema": "wildcensus-manifest/1"}) + "\n" +
            json.dumps({"image_id": "b0", "file": "blank.png", "transect_id": 0,
                        "camera_id": "synth_small", "census_eligible": False,
                        "lat": None, "lon": None, "alt_agl_m": None,
                        "heading_deg": None, "timestamp_utc": None}) + "\n")
        out = tmp_path / "det.jsonl"
        counters = infer_manifest(
            AdapterConfig(weights=str(write_weights(tmp_path / "w.json"))),
            manifest, out)
        assert counters == {"images": 1, "skipped": 0, "detections": 0}
        assert out.read_text().splitlines()[1:] == []

    def test_unreadable_image_skipped_and_logged(self, tmp_path, caplog):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(
            json.dumps({"image_id": "ghost", "file": "missing.png",
                        "transect_id": 0, "camera_id": "synth_small",
                        "census_eligible": False}) + "\n")
        counters = infer_manifest(
            AdapterConfig(weights=str(write_weights(tmp_path / "w.json"))),
            manifest, tmp_path / "det.jsonl")
        assert counters["skipped"] == 1
        assert "ghost" in caplog.text

    def test_missing_weights_abort(self, tmp_path):
        assert main(["--weights", str(tmp_path / "nope.json"),
                     "--manifest", str(tmp_path / "m.jsonl"),
                     "--out", str(tmp_path / "d.jsonl")]) == 1

    def test_bad_weights_kind_abort(self, tmp_path):
        weights = tmp_path / "w.json"
        weights.write_text(json.dumps({"kind": "wavelets"}))
        with pytest.raises(AdapterError, match="unsupported"):
            infer_manifest(AdapterConfig(weights=str(weights)),
                           tmp_path / "m.jsonl", tmp_path / "d.jsonl")

    def test_confidence_floor_filters(self, fixture_dir, tmp_path):
        weights = write_weights(tmp_path / "weights.json")
        out = tmp_path / "det.jsonl"
        assert main(["--weights", str(weights),
                     "--manifest", str(fixture_dir / "manifest10.jsonl"),
                     "--out", str(out), "--conf-floor", "0.99"]) == 0
        assert out.read_text().splitlines()[1:] == []
