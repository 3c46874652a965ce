"""HTTP/JSON front for the review service.

Thin FastAPI layer: every mutation goes through the ReviewService (which
serializes writers), request bodies are validated by the same domain
constructors the rest of the toolkit uses, and domain ValidationErrors map
to 409 for contended operations and 400 otherwise.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import Body, FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse

from .errors import ValidationError
from .review import ReviewService, Verdict

_CONTENTION_MARKERS = ("leased to", "already reviewed", "no further reviews")


def _http_error(exc: ValidationError) -> HTTPException:
    message = str(exc)
    status = 409 if any(m in message for m in _CONTENTION_MARKERS) else 400
    return HTTPException(status_code=status, detail=message)


def _verdict_from_payload(image_id: str, payload: dict, adjudication: bool) -> Verdict:
    doc = dict(payload)
    doc.setdefault("image_id", image_id)
    doc.setdefault("verdict_id", f"{image_id}/{doc.get('observer_id', '?')}")
    doc["adjudication"] = adjudication
    if doc["image_id"] != image_id:
        raise ValidationError("payload image_id does not match the URL")
    try:
        return Verdict.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad verdict payload: {exc}") from exc


def create_app(service: ReviewService, image_root: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="wildcensus review service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    root = Path(image_root) if image_root is not None else None

    @app.get("/api/tasks/next")
    def next_task(observer: str) -> Response:
        try:
            view = service.lease_next(observer)
        except ValidationError as exc:
            raise _http_error(exc)
        if view is None:
            return Response(status_code=204)
        return _json(view)

    @app.get("/api/stats")
    def stats() -> dict:
        return service.stats()

    @app.get("/api/tasks/{image_id}")
    def get_task(image_id: str) -> dict:
        try:
            view = service.get_task(image_id)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        view["image_url"] = f"/api/images/{image_id}/file"
        return view

    @app.post("/api/tasks/{image_id}/verdict")
    def submit_verdict(image_id: str, payload: dict = Body(...)) -> dict:
        try:
            verdict = _verdict_from_payload(image_id, payload, adjudication=False)
            return service.submit_verdict(verdict)
        except ValidationError as exc:
            raise _http_error(exc)

    @app.post("/api/tasks/{image_id}/adjudicate")
    def adjudicate(image_id: str, payload: dict = Body(...)) -> dict:
        try:
            verdict = _verdict_from_payload(image_id, payload, adjudication=True)
            return service.adjudicate(image_id, verdict)
        except ValidationError as exc:
            raise _http_error(exc)

    @app.get("/api/images/{image_id}/file")
    def image_file(image_id: str):
        record = service.images.get(image_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        path = Path(record.file)
        if root is not None and not path.is_absolute():
            path = root / path
        if not path.exists():
            raise HTTPException(status_code=404,
                                detail=f"image file missing: {record.file}")
        return FileResponse(path)

    return app


def _json(payload: dict):
    from fastapi.responses import JSONResponse
    return JSONResponse(payload)
