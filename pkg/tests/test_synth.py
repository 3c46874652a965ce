import json

import pytest

from wildcensus.census import dedup, reconcile, run_census
from wildcensus.datastore import (
    image_sizes,
    load_detections,
    load_labels,
    load_manifest,
)
from wildcensus.errors import ValidationError
from wildcensus.evaluation import sweep_confidence
from wildcensus.geometry import builtin_cameras
from wildcensus.planner import SurveyPlan
from wildcensus.synth import ScenarioSpec, generate, load_scenario, load_verdicts


def small_spec(**overrides) -> ScenarioSpec:
    defaults = dict(seed=5, area_width_m=400.0, area_height_m=1500.0,
                    deer_count=6, min_spacing_m=60.0, select_fraction=1.0)
    defaults.update(overrides)
    return ScenarioSpec(**defaults)


class TestScenarioSpec:
    def test_spacing_must_clear_radius(self):
        with pytest.raises(ValidationError, match="spacing"):
            ScenarioSpec(min_spacing_m=20.0, dedup_radius_m=20.0)

    def test_round_trip(self):
        spec = small_spec()
        assert ScenarioSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError, match="unknown"):
            ScenarioSpec.from_dict({"seed": 1, "wolves": 3})


class TestGenerate:
    def test_outputs_schema_valid(self, tmp_path):
        survey = generate(small_spec())
        survey.write(tmp_path)
        images = load_manifest(tmp_path / "manifest.jsonl")
        sizes = image_sizes(images, builtin_cameras())
        labels = load_labels(tmp_path / "labels.jsonl", images, sizes)
        dets = load_detections(tmp_path / "detections.jsonl", images, sizes)
        verdicts = load_verdicts(tmp_path / "verdicts.jsonl")
        assert len(images) == len(survey.images)
        assert len(labels) == len(survey.labels)
        assert len(dets) == len(survey.detections)
        assert len(verdicts) == 2 * len(images)
        plan = SurveyPlan.from_dict(json.loads((tmp_path / "plan.json").read_text()))
        plan.validate()
        truth = json.loads((tmp_path / "truth.json").read_text())
        assert truth["true_count"] == 6

    def test_seed_determinism(self, tmp_path):
        a, b = generate(small_spec()), generate(small_spec())
        da, db = tmp_path / "a", tmp_path / "b"
        a.write(da)
        b.write(db)
        for name in ("manifest.jsonl", "labels.jsonl", "detections.jsonl",
                     "verdicts.jsonl", "plan.json", "truth.json"):
            assert (da / name).read_bytes() == (db / name).read_bytes()

    def test_every_deer_is_labeled_somewhere(self):
        survey = generate(small_spec(deer_count=10, seed=3))
        assert survey.true_count == 10
        # each planted deer must be visible in at least one frame
        assert len({round(l.bbox[0], 3) for l in survey.labels}) >= 1
        covered = len(survey.labels)
        assert covered >= survey.true_count

    def test_overlap_zones_create_duplicates(self):
        survey = generate(small_spec(deer_count=12, seed=11))
        # labels outnumber deer when some fall in forward-overlap bands
        assert len(survey.labels) > survey.true_count

    def test_zero_deer(self):
        survey = generate(small_spec(deer_count=0))
        assert survey.labels == [] and survey.detections == []
        assert all(v.declared_empty for v in survey.verdicts)

    def test_infeasible_spacing_rejected(self):
        with pytest.raises(ValidationError, match="place"):
            generate(small_spec(deer_count=500, min_spacing_m=120.0))


class TestPipelineOnSynthetic:
    def test_census_recovers_true_count(self):
        spec = small_spec(deer_count=9, seed=21)
        survey = generate(spec)
        report = run_census(survey.verdicts, survey.images, builtin_cameras(),
                            survey.plan, dedup_radius_m=spec.dedup_radius_m)
        assert report.estimate.unique_count == 9

    def test_detector_profile_separates_in_sweep(self):
        spec = small_spec(deer_count=8, seed=2, fp_per_image=0.5,
                          tp_conf=(0.7, 0.95), fp_conf=(0.05, 0.3))
        survey = generate(spec)
        result = sweep_confidence(survey.detections, survey.labels,
                                  grid=[0.0, 0.5, 0.99])
        profile = dict(result.profile)
        assert profile[0.5] == 1.0  # all TPs kept, every FP filtered
        assert profile[0.99] < 1.0  # loses true positives

    def test_observer_misses_leave_conflicts(self):
        spec = small_spec(deer_count=10, seed=13, observer_miss_rate=0.5)
        survey = generate(spec)
        result = reconcile(survey.verdicts, survey.images, builtin_cameras(),
                           survey.plan.origin)
        # with a 50% miss rate some boxes end up single-observer
        assert len(result.conflicts) > 0
