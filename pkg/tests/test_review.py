import json
import random
import threading

import pytest

from wildcensus.datastore import Detection
from wildcensus.errors import CorruptLogError, ValidationError
from wildcensus.review import (
    BoxDecision,
    Event,
    ReviewService,
    Verdict,
    read_event_log,
    replay,
    verdicts_agree,
)
from tests.test_datastore import make_image


class FakeClock:
    def __init__(self, t=1000.0):
        self.t = t

    def __call__(self):
        return self.t

    def advance(self, dt):
        self.t += dt


def verdict(image_id, observer, boxes=None, empty=False, vid=None, dur=5.0):
    return Verdict(
        verdict_id=vid or f"{image_id}/{observer}",
        image_id=image_id,
        observer_id=observer,
        boxes=tuple(boxes or ()),
        declared_empty=empty,
        duration_s=dur,
        submitted_at=0.0,
    )


def deer_box(x=100.0, y=100.0, action="add_manual", candidate_id=None):
    return BoxDecision(bbox=(x, y, 40.0, 30.0), cls="deer", action=action,
                       candidate_id=candidate_id)


def service_with_tasks(n=3, clock=None, detections=(), tau=0.0, **kwargs):
    images = [make_image(i) for i in range(n)]
    svc = ReviewService(images=images, clock=clock or FakeClock(), **kwargs)
    svc.seed_tasks([rec.image_id for rec in images], detections, tau)
    return svc


class TestVerdictInvariants:
    def test_empty_xor_boxes(self):
        with pytest.raises(ValidationError):
            verdict("img00000", "a", boxes=[deer_box()], empty=True)
        with pytest.raises(ValidationError):
            verdict("img00000", "a", boxes=[], empty=False)

    def test_confirm_needs_candidate_id(self):
        with pytest.raises(ValidationError):
            BoxDecision(bbox=(0, 0, 10, 10), cls="deer", action="confirm_model")

    def test_reject_actions_do_not_count(self):
        v = verdict("img00000", "a", boxes=[
            deer_box(action="reject_model", candidate_id="img00000/c0"),
            deer_box(x=200.0)])
        assert v.class_counts() == {"deer": 1}


class TestAgreement:
    def test_same_region_agrees(self):
        a = verdict("img00000", "a", boxes=[deer_box(100, 100)])
        b = verdict("img00000", "b", boxes=[deer_box(110, 105)])
        assert verdicts_agree(a, b)

    def test_empty_vs_deer_disagrees(self):
        a = verdict("img00000", "a", empty=True)
        b = verdict("img00000", "b", boxes=[deer_box()])
        assert not verdicts_agree(a, b)

    def test_both_empty_agree(self):
        assert verdicts_agree(verdict("i", "a", empty=True),
                              verdict("i", "b", empty=True))

    def test_same_count_wrong_place_disagrees(self):
        a = verdict("i", "a", boxes=[deer_box(0, 0)])
        b = verdict("i", "b", boxes=[deer_box(500, 500)])
        assert not verdicts_agree(a, b)

    def test_symmetry(self):
        rng = random.Random(6)
        for _ in range(100):
            boxes_a = [deer_box(rng.uniform(0, 300), rng.uniform(0, 300))
                       for _ in range(rng.randint(0, 3))]
            boxes_b = [deer_box(rng.uniform(0, 300), rng.uniform(0, 300))
                       for _ in range(rng.randint(0, 3))]
            a = verdict("i", "a", boxes=boxes_a, empty=not boxes_a)
            b = verdict("i", "b", boxes=boxes_b, empty=not boxes_b)
            assert verdicts_agree(a, b) == verdicts_agree(b, a)


class TestLeasing:
    def test_fresh_task_leased(self):
        svc = service_with_tasks()
        view = svc.lease_next("ana")
        assert view["image_id"] == "img00000"
        assert view["state"] == "leased"
        assert view["lease"]["observer_id"] == "ana"

    def test_second_review_must_be_independent(self):
        clock = FakeClock()
        svc = service_with_tasks(n=1, clock=clock)
        svc.lease_next("ana")
        svc.submit_verdict(verdict("img00000", "ana", empty=True))
        assert svc.lease_next("ana") is None  # only ana requesting: nothing to do
        view = svc.lease_next("ben")
        assert view["image_id"] == "img00000"

    def test_expired_lease_reclaimable(self):
        clock = FakeClock()
        svc = service_with_tasks(n=1, clock=clock, lease_ttl_s=900.0)
        svc.lease_next("ana")
        assert svc.lease_next("ben") is None  # actively leased
        clock.advance(901.0)
        view = svc.lease_next("ben")
        assert view["lease"]["observer_id"] == "ben"
        kinds = [e.kind for e in svc.events]
        assert kinds.count("lease_expired") == 1

    def test_active_lease_not_double_leased(self):
        svc = service_with_tasks(n=1)
        a = svc.lease_next("ana")
        b = svc.lease_next("ana")  # same observer gets the same task back
        assert a["image_id"] == b["image_id"]
        assert svc.lease_next("ben") is None

    def test_empty_queue_returns_none(self):
        svc = ReviewService(images=[], clock=FakeClock())
        assert svc.lease_next("ana") is None


class TestSubmit:
    def test_agreeing_pair_double_reviewed(self):
        svc = service_with_tasks(n=1)
        svc.lease_next("ana")
        svc.submit_verdict(verdict("img00000", "ana", boxes=[deer_box(100, 100)]))
        svc.lease_next("ben")
        view = svc.submit_verdict(verdict("img00000", "ben",
                                          boxes=[deer_box(108, 103)]))
        assert view["state"] == "double_reviewed"

    def test_disagreement_goes_to_conflict(self):
        svc = service_with_tasks(n=1)
        svc.lease_next("ana")
        svc.submit_verdict(verdict("img00000", "ana", empty=True))
        svc.lease_next("ben")
        view = svc.submit_verdict(verdict("img00000", "ben", boxes=[deer_box()]))
        assert view["state"] == "conflict"

    def test_duplicate_observer_rejected(self):
        svc = service_with_tasks(n=1)
        svc.lease_next("ana")
        svc.submit_verdict(verdict("img00000", "ana", empty=True))
        with pytest.raises(ValidationError, match="independent"):
            svc.submit_verdict(verdict("img00000", "ana", empty=True))

    def test_stale_lease_of_other_holder_rejected(self):
        svc = service_with_tasks(n=1)
        svc.lease_next("ana")
        with pytest.raises(ValidationError, match="leased"):
            svc.submit_verdict(verdict("img00000", "ben", empty=True))

    def test_submit_after_expiry_permitted(self):
        clock = FakeClock()
        svc = service_with_tasks(n=1, clock=clock, lease_ttl_s=900.0)
        svc.lease_next("ana")
        clock.advance(1000.0)
        view = svc.submit_verdict(verdict("img00000", "ben", empty=True))
        assert view["state"] == "single_reviewed"


class TestAdjudication:
    def _conflicted(self):
        svc = service_with_tasks(n=1)
        svc.lease_next("ana")
        svc.submit_verdict(verdict("img00000", "ana", empty=True))
        svc.lease_next("ben")
        svc.submit_verdict(verdict("img00000", "ben", boxes=[deer_box()]))
        return svc

    def test_expert_resolves_conflict(self):
        svc = self._conflicted()
        view = svc.adjudicate("img00000", verdict("img00000", "expert",
                                                  boxes=[deer_box()]))
        assert view["state"] == "adjudicated"
        counting = svc.counting_verdicts()
        assert len(counting) == 1 and counting[0].adjudication

    def test_adjudicating_settled_task_rejected(self):
        svc = service_with_tasks(n=1)
        svc.lease_next("ana")
        svc.submit_verdict(verdict("img00000", "ana", empty=True))
        svc.lease_next("ben")
        svc.submit_verdict(verdict("img00000", "ben", empty=True))
        with pytest.raises(ValidationError, match="not in conflict"):
            svc.adjudicate("img00000", verdict("img00000", "expert", empty=True))

    def test_adjudication_survives_replay(self):
        svc = self._conflicted()
        svc.adjudicate("img00000", verdict("img00000", "expert", boxes=[deer_box()]))
        again = replay(svc.events, images=svc.images.values())
        assert again.state_dict() == svc.state_dict()


class TestCandidates:
    def test_candidates_attached_at_tau(self):
        dets = [Detection("img00000", "deer", (10, 10, 40, 30), 0.30),
                Detection("img00000", "deer", (200, 10, 40, 30), 0.20)]
        svc = service_with_tasks(n=1, detections=dets, tau=0.26)
        view = svc.get_task("img00000")
        assert len(view["candidates"]) == 1
        assert view["candidates"][0]["confidence"] == 0.30

    def test_no_detections_no_candidates(self):
        svc = service_with_tasks(n=1)
        assert svc.get_task("img00000")["candidates"] == []

    def test_unknown_image_rejected(self):
        images = [make_image(0)]
        svc = ReviewService(images=images, clock=FakeClock())
        with pytest.raises(ValidationError, match="ghost"):
            svc.seed_tasks(["ghost"])

    def test_confirm_references_candidate(self):
        dets = [Detection("img00000", "deer", (100, 100, 40, 30), 0.9)]
        svc = service_with_tasks(n=1, detections=dets)
        svc.lease_next("ana")
        v = verdict("img00000", "ana", boxes=[
            deer_box(100, 100, action="confirm_model", candidate_id="img00000/c0")])
        assert svc.submit_verdict(v)["state"] == "single_reviewed"
        with pytest.raises(ValidationError, match="unknown candidate"):
            svc.lease_next("ben")
            svc.submit_verdict(verdict("img00000", "ben", boxes=[
                deer_box(action="confirm_model", candidate_id="nope")]))


class TestReplay:
    def test_empty_log_all_pending(self):
        svc = replay([], images=[make_image(0)])
        assert svc.state_dict()["tasks"] == {}

    def test_gap_rejected(self):
        svc = service_with_tasks(n=2)
        events = list(svc.events)
        skipped = Event(seq=3, kind=events[1].kind, at=events[1].at,
                        payload=events[1].payload)
        with pytest.raises(CorruptLogError):
            replay([events[0], skipped])

    def test_duplicate_rejected(self):
        svc = service_with_tasks(n=2)
        events = list(svc.events)
        with pytest.raises(CorruptLogError):
            replay([events[0], events[0]])

    def test_log_round_trips_through_disk(self, tmp_path):
        clock = FakeClock()
        images = [make_image(i) for i in range(2)]
        svc = ReviewService(images=images, store_dir=tmp_path, clock=clock)
        svc.seed_tasks([r.image_id for r in images])
        svc.lease_next("ana")
        svc.submit_verdict(verdict("img00000", "ana", empty=True))
        events = read_event_log(tmp_path / "events.jsonl")
        assert [e.seq for e in events] == list(range(1, len(events) + 1))
        resumed = ReviewService(images=images, store_dir=tmp_path, clock=clock)
        assert resumed.state_dict() == svc.state_dict()

    def test_randomized_equivalence_1000_events(self):
        clock = FakeClock()
        images = [make_image(i) for i in range(250)]
        svc = ReviewService(images=images, clock=clock, lease_ttl_s=300.0)
        svc.seed_tasks([r.image_id for r in images])
        rng = random.Random(42)
        observers = [f"obs{i}" for i in range(6)]
        held: dict[str, str] = {}  # observer -> image_id
        for _ in range(12_000):
            if len(svc.events) >= 1000:
                break
            op = rng.random()
            obs = rng.choice(observers)
            if op < 0.40:
                view = svc.lease_next(obs)
                if view is not None:
                    held[obs] = view["image_id"]
            elif op < 0.80 and obs in held:
                image_id = held.pop(obs)
                boxes = [deer_box(rng.uniform(0, 800), rng.uniform(0, 500))
                         for _ in range(rng.randint(0, 2))]
                try:
                    svc.submit_verdict(verdict(image_id, obs, boxes=boxes,
                                               empty=not boxes,
                                               vid=f"{image_id}/{obs}/{rng.random()}"))
                except ValidationError:
                    pass
            elif op < 0.9:
                conflicted = [i for i, t in svc.state_dict()["tasks"].items()
                              if t["conflict"] and not t["adjudication"]]
                if conflicted:
                    image_id = rng.choice(conflicted)
                    svc.adjudicate(image_id, verdict(image_id, "expert",
                                                     empty=True,
                                                     vid=f"adj/{image_id}"))
            else:
                clock.advance(rng.uniform(0, 400))
        assert len(svc.events) >= 1000
        again = replay(svc.events, images=images, lease_ttl_s=300.0)
        assert again.state_dict() == svc.state_dict()

    def test_no_census_eligibility_without_two_observers(self):
        # scan the randomized run's final state: every task exposing counting
        # verdicts has either two distinct observers or an adjudication
        clock = FakeClock()
        images = [make_image(i) for i in range(10)]
        svc = ReviewService(images=images, clock=clock)
        svc.seed_tasks([r.image_id for r in images])
        rng = random.Random(7)
        for _ in range(200):
            obs = f"obs{rng.randint(0, 3)}"
            view = svc.lease_next(obs)
            if view and rng.random() < 0.8:
                try:
                    svc.submit_verdict(verdict(view["image_id"], obs, empty=True,
                                               vid=f"{view['image_id']}/{obs}"))
                except ValidationError:
                    pass
        state = svc.state_dict()
        for image_id, task in state["tasks"].items():
            verdicts = task["reviews"]
            if task["adjudication"] is None and len(verdicts) >= 2:
                assert len({v["observer_id"] for v in verdicts}) == 2


class TestConcurrency:
    def test_concurrent_leases_never_double_lease(self):
        for attempt in range(5):
            images = [make_image(i) for i in range(8)]
            svc = ReviewService(images=images, clock=FakeClock())
            svc.seed_tasks([r.image_id for r in images])
            barrier = threading.Barrier(8)
            results: list[dict | None] = [None] * 8

            def worker(k):
                barrier.wait()
                results[k] = svc.lease_next(f"obs{k}")

            threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            leased = [r["image_id"] for r in results if r is not None]
            assert len(leased) == len(set(leased)) == 8

    def test_concurrent_submissions_keep_log_contiguous(self):
        images = [make_image(i) for i in range(30)]
        svc = ReviewService(images=images, clock=FakeClock())
        svc.seed_tasks([r.image_id for r in images])

        def worker(obs):
            while True:
                view = svc.lease_next(obs)
                if view is None:
                    return
                try:
                    svc.submit_verdict(verdict(view["image_id"], obs, empty=True,
                                               vid=f"{view['image_id']}/{obs}"))
                except ValidationError:
                    pass

        threads = [threading.Thread(target=worker, args=(f"obs{k}",))
                   for k in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        seqs = [e.seq for e in svc.events]
        assert seqs == list(range(1, len(seqs) + 1))
        again = replay(svc.events, images=images)
        assert again.state_dict() == svc.state_dict()
