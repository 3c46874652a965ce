import json

import pytest

from wildcensus.datastore import (
    CategoryQuota,
    Detection,
    GroundTruthLabel,
    ImageRecord,
    PER_TRANSECT,
    SplitSpec,
    categorize_images,
    export_training_set,
    image_sizes,
    load_detections,
    load_labels,
    load_manifest,
    load_splits,
    make_splits,
    survey_split_spec,
    write_detections,
    write_labels,
    write_manifest,
    write_splits,
)
from wildcensus.errors import ValidationError
from wildcensus.geometry import SYNTH_SMALL, FlightPose, GeoPoint, builtin_cameras


def make_image(i, transect=0, census=True, camera="synth_small"):
    pose = FlightPose(position=GeoPoint(lat=-33.9, lon=-58.9), alt_agl_m=45.0,
                      heading_deg=0.0, timestamp_utc=1000.0 + i)
    return ImageRecord(image_id=f"img{i:05d}", file=f"images/img{i:05d}.png",
                       transect_id=transect, camera_id=camera,
                       census_eligible=census, pose=pose)


SIZE = (SYNTH_SMALL.image_width_px, SYNTH_SMALL.image_height_px)


class TestManifest:
    def test_round_trip(self, tmp_path):
        records = [make_image(i, transect=i % 3) for i in range(10)]
        path = tmp_path / "manifest.jsonl"
        write_manifest(path, records)
        assert load_manifest(path) == records

    def test_duplicate_id_rejected(self, tmp_path):
        records = [make_image(1), make_image(1)]
        path = tmp_path / "manifest.jsonl"
        write_manifest(path, records)
        with pytest.raises(ValidationError, match="img00001"):
            load_manifest(path)

    def test_empty_file_loads_empty(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("")
        assert load_manifest(path) == []

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text('{"schema": "wildcensus-manifest/1"}\n{oops\n')
        with pytest.raises(ValidationError, match=":2"):
            load_manifest(path)

    def test_full_survey_scale_load(self, tmp_path):
        # 39,798 photographs across 575 transects load cleanly
        records = [make_image(i, transect=i % 575) for i in range(39_798)]
        path = tmp_path / "manifest.jsonl"
        write_manifest(path, records)
        loaded = load_manifest(path)
        assert len(loaded) == 39_798
        assert len({r.transect_id for r in loaded}) == 575

    def test_census_eligible_needs_pose(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        rec = make_image(1).to_dict()
        rec.update(lat=None, lon=None, alt_agl_m=None, heading_deg=None,
                   timestamp_utc=None)
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ValidationError, match="pose"):
            load_manifest(path)


class TestDetectionsAndLabels:
    def setup_method(self):
        self.images = [make_image(i) for i in range(3)]
        self.sizes = image_sizes(self.images, builtin_cameras())

    def test_round_trip(self, tmp_path):
        dets = [Detection("img00000", "deer", (10, 10, 30, 20), 0.9),
                Detection("img00001", "cow", (5, 5, 40, 40), 0.4,
                          mask=((5, 5), (45, 5), (45, 45)))]
        path = tmp_path / "detections.jsonl"
        write_detections(path, dets)
        assert load_detections(path, self.images, self.sizes) == dets

    def test_confidence_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "detections.jsonl"
        path.write_text(json.dumps({"image_id": "img00000", "class": "deer",
                                    "bbox": [0, 0, 10, 10], "confidence": 1.5}) + "\n")
        with pytest.raises(ValidationError, match="confidence"):
            load_detections(path, self.images, self.sizes)

    def test_bbox_past_edge_rejected(self, tmp_path):
        path = tmp_path / "detections.jsonl"
        w, h = SIZE
        path.write_text(json.dumps({"image_id": "img00000", "class": "deer",
                                    "bbox": [w - 5, 0, 10, 10],
                                    "confidence": 0.5}) + "\n")
        with pytest.raises(ValidationError, match="bounds"):
            load_detections(path, self.images, self.sizes)

    def test_unknown_image_rejected(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        path.write_text(json.dumps({"image_id": "ghost", "class": "deer",
                                    "bbox": [0, 0, 10, 10], "observers": ["a"]}) + "\n")
        with pytest.raises(ValidationError, match="ghost"):
            load_labels(path, self.images, self.sizes)

    def test_unknown_class_rejected(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        path.write_text(json.dumps({"image_id": "img00000", "class": "unicorn",
                                    "bbox": [0, 0, 10, 10]}) + "\n")
        with pytest.raises(ValidationError, match="unicorn"):
            load_labels(path, self.images, self.sizes)

    def test_label_round_trip(self, tmp_path):
        labels = [GroundTruthLabel("img00002", "deer", (10, 10, 20, 10),
                                   mask=((10, 10), (30, 10), (30, 20)),
                                   observers=("a", "b"))]
        path = tmp_path / "labels.jsonl"
        write_labels(path, labels)
        assert load_labels(path, self.images, self.sizes) == labels


def build_survey_corpus():
    """Images and labels matching the full survey label counts:
    232 deer images, 88 cow, 3 other, plus 3 empties per transect x 575."""
    images = []
    labels = []
    i = 0
    n_transects = 575

    def add(count, cls, mask):
        nonlocal i
        for _ in range(count):
            rec = make_image(i, transect=i % n_transects)
            images.append(rec)
            labels.append(GroundTruthLabel(
                rec.image_id, cls, (100.0, 100.0, 40.0, 30.0),
                mask=((100, 100), (140, 100), (140, 130)) if mask else None,
                observers=("a", "b")))
            i += 1

    add(232, "deer", mask=True)
    add(88, "cow", mask=False)
    add(3, "other_animal", mask=False)
    for t in range(n_transects):
        for _ in range(3):
            images.append(make_image(i, transect=t))
            i += 1
    return images, labels


class TestSplits:
    def test_survey_spec_counts(self):
        images, labels = build_survey_corpus()
        splits = make_splits(images, labels, survey_split_spec(), seed=7)
        assert [len(splits["train"].ids[c]) for c in ("deer", "cow", "other", "empty")] == \
            [140, 54, 3, 575]
        assert [len(splits["val"].ids[c]) for c in ("deer", "cow", "other", "empty")] == \
            [46, 17, 0, 575]
        assert [len(splits["test"].ids[c]) for c in ("deer", "cow", "other", "empty")] == \
            [46, 17, 0, 575]

    def test_category_totals_reconcile(self):
        images, labels = build_survey_corpus()
        cats = categorize_images(images, labels)
        assert len(cats["deer"]) == 232 == 140 + 46 + 46
        assert len(cats["cow"]) == 88 == 54 + 17 + 17

    def test_disjoint(self):
        images, labels = build_survey_corpus()
        splits = make_splits(images, labels, survey_split_spec(), seed=7)
        train, val, test = (splits[s].all_ids() for s in ("train", "val", "test"))
        assert not (train & val) and not (train & test) and not (val & test)

    def test_seed_determinism(self, tmp_path):
        images, labels = build_survey_corpus()
        a = make_splits(images, labels, survey_split_spec(), seed=7)
        b = make_splits(images, labels, survey_split_spec(), seed=7)
        assert {k: m.ids for k, m in a.items()} == {k: m.ids for k, m in b.items()}
        write_splits(tmp_path / "splits.json", a)
        loaded = load_splits(tmp_path / "splits.json")
        assert {k: m.ids for k, m in loaded.items()} == {k: m.ids for k, m in a.items()}

    def test_insufficient_images_rejected(self):
        images, labels = build_survey_corpus()
        spec = SplitSpec(train=CategoryQuota(deer=500, empty=0),
                         val=CategoryQuota(), test=CategoryQuota())
        with pytest.raises(ValidationError, match="deer"):
            make_splits(images, labels, spec, seed=7)

    def test_empty_reuse_flag(self):
        images, labels = build_survey_corpus()
        splits = make_splits(images, labels, survey_split_spec(), seed=7,
                             allow_empty_reuse=True)
        assert splits["train"].ids["empty"] == splits["val"].ids["empty"]


class TestExport:
    def test_export_counts_and_round_trip(self, tmp_path):
        images, labels = build_survey_corpus()
        sizes = image_sizes(images, builtin_cameras())
        splits = make_splits(images, labels, survey_split_spec(), seed=7)
        meta = export_training_set(splits["train"], labels, images, sizes, tmp_path)
        assert meta["counts"] == {"deer": 140, "cow": 54, "other": 3, "empty": 575}
        assert meta["instances_do_not_overlap"] is True
        files = list((tmp_path / "annotations").glob("*.txt"))
        assert len(files) == 140 + 54 + 3 + 575

        # denormalizing a deer annotation reproduces the mask within 0.5 px
        deer_id = splits["train"].ids["deer"][0]
        text = (tmp_path / "annotations" / f"{deer_id}.txt").read_text()
        row = text.strip().split()
        assert row[0] == "0"  # deer class index
        coords = [float(v) for v in row[1:]]
        w, h = sizes[deer_id]
        verts = [(coords[i] * w, coords[i + 1] * h) for i in range(0, len(coords), 2)]
        expected = [(100, 100), (140, 100), (140, 130)]
        for got, want in zip(verts, expected):
            assert abs(got[0] - want[0]) <= 0.5 and abs(got[1] - want[1]) <= 0.5

    def test_deer_without_mask_rejected(self, tmp_path):
        images = [make_image(0)]
        labels = [GroundTruthLabel("img00000", "deer", (10, 10, 20, 10))]
        sizes = image_sizes(images, builtin_cameras())
        from wildcensus.datastore import SplitManifest
        split = SplitManifest(split="train", ids={"deer": ["img00000"]}, seed=0)
        with pytest.raises(ValidationError, match="img00000"):
            export_training_set(split, labels, images, sizes, tmp_path)
