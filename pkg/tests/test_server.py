import pytest
from fastapi.testclient import TestClient

from wildcensus.datastore import Detection
from wildcensus.review import ReviewService
from wildcensus.server import create_app
from tests.test_datastore import make_image
from tests.test_review import FakeClock


@pytest.fixture
def client(tmp_path):
    images = [make_image(i) for i in range(3)]
    dets = [Detection("img00000", "deer", (100, 100, 40, 30), 0.9)]
    service = ReviewService(images=images, store_dir=tmp_path, clock=FakeClock())
    service.seed_tasks([r.image_id for r in images], dets, tau=0.26)
    app = create_app(service, image_root=tmp_path)
    return TestClient(app)


def submit(client, image_id, observer, boxes=None, empty=False, ok=True):
    payload = {
        "observer_id": observer,
        "verdict_id": f"{image_id}/{observer}",
        "boxes": boxes or [],
        "declared_empty": empty,
        "duration_s": 8.0,
        "submitted_at": 123.0,
    }
    res = client.post(f"/api/tasks/{image_id}/verdict", json=payload)
    if ok:
        assert res.status_code == 200, res.text
    return res


class TestHttpFlow:
    def test_lease_and_task_shape(self, client):
        res = client.get("/api/tasks/next", params={"observer": "ana"})
        assert res.status_code == 200
        task = res.json()
        assert task["image_id"] == "img00000"
        assert task["state"] == "leased"
        assert len(task["candidates"]) == 1
        assert task["candidates"][0]["candidate_id"] == "img00000/c0"

    def test_full_dual_review(self, client):
        task = client.get("/api/tasks/next", params={"observer": "ana"}).json()
        image_id = task["image_id"]
        box = {"bbox": [100, 100, 40, 30], "class": "deer",
               "action": "confirm_model", "candidate_id": "img00000/c0"}
        submit(client, image_id, "ana", boxes=[box])
        client.get("/api/tasks/next", params={"observer": "ben"})
        res = submit(client, image_id, "ben",
                     boxes=[{"bbox": [104, 102, 40, 30], "class": "deer",
                             "action": "add_manual"}])
        assert res.json()["state"] == "double_reviewed"
        stats = client.get("/api/stats").json()
        assert stats["queue_depths"]["double_reviewed"] == 1
        assert stats["agreement_rate"] == 1.0
        assert stats["per_observer"]["ana"]["verdicts"] == 1

    def test_conflict_and_adjudication(self, client):
        task = client.get("/api/tasks/next", params={"observer": "ana"}).json()
        image_id = task["image_id"]
        submit(client, image_id, "ana", empty=True)
        client.get("/api/tasks/next", params={"observer": "ben"})
        res = submit(client, image_id, "ben",
                     boxes=[{"bbox": [10, 10, 30, 30], "class": "deer",
                             "action": "add_manual"}])
        assert res.json()["state"] == "conflict"
        res = client.post(f"/api/tasks/{image_id}/adjudicate", json={
            "observer_id": "expert",
            "verdict_id": f"{image_id}/expert",
            "boxes": [{"bbox": [10, 10, 30, 30], "class": "deer",
                       "action": "add_manual"}],
            "declared_empty": False,
            "duration_s": 30.0,
            "submitted_at": 999.0,
        })
        assert res.status_code == 200
        assert res.json()["state"] == "adjudicated"

    def test_duplicate_observer_conflict_code(self, client):
        task = client.get("/api/tasks/next", params={"observer": "ana"}).json()
        image_id = task["image_id"]
        submit(client, image_id, "ana", empty=True)
        res = submit(client, image_id, "ana", empty=True, ok=False)
        assert res.status_code == 409

    def test_invalid_payload_400(self, client):
        task = client.get("/api/tasks/next", params={"observer": "ana"}).json()
        res = client.post(f"/api/tasks/{task['image_id']}/verdict", json={
            "observer_id": "ana", "boxes": [], "declared_empty": False,
        })
        assert res.status_code == 400

    def test_queue_drains_to_204(self, client):
        for obs in ("ana", "ben"):
            while True:
                res = client.get("/api/tasks/next", params={"observer": obs})
                if res.status_code == 204:
                    break
                submit(client, res.json()["image_id"], obs, empty=True)
        res = client.get("/api/tasks/next", params={"observer": "ana"})
        assert res.status_code == 204

    def test_unknown_task_404(self, client):
        assert client.get("/api/tasks/ghost").status_code == 404

    def test_image_file_served(self, client, tmp_path):
        (tmp_path / "images").mkdir(exist_ok=True)
        (tmp_path / "images" / "img00000.png").write_bytes(b"\x89PNG fake")
        res = client.get("/api/images/img00000/file")
        assert res.status_code == 200
        assert res.content == b"\x89PNG fake"

    def test_missing_image_404(self, client):
        assert client.get("/api/images/img00001/file").status_code == 404
        assert client.get("/api/images/ghost/file").status_code == 404
