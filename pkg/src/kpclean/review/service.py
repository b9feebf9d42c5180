"""HTTP+JSON review service: serve tasks, collect verdicts, report quality.

Endpoints:
  GET  /api/tasks/next?annotator=ID      next unjudged task or {"done": true}
  POST /api/verdicts                     one verdict or a batch; idempotent
  GET  /api/verdicts?source=&annotator=  stable-order export
  GET  /api/images/{image_id}            static passthrough from the image root
  GET  /api/reports/precision-recall     detector diagnostics vs. stored verdicts
"""
from __future__ import annotations

import time
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import FileResponse, JSONResponse

from ..skeleton import Difficulty, ErrorClass
from ..statslab import detector_diagnostics
from .store import ReviewQueue, ReviewVerdict, VerdictStore


def _verdict_from_payload(doc: dict) -> ReviewVerdict:
    try:
        classes = frozenset(ErrorClass(c) for c in doc.get("error_classes", []))
        difficulty = Difficulty(doc["difficulty"]) if doc.get("difficulty") else None
        return ReviewVerdict.create(
            verdict_id=str(doc["verdict_id"]),
            annotator_id=str(doc["annotator_id"]),
            pose_id=str(doc["pose_id"]),
            joint_index=None if doc.get("joint_index") is None else int(doc["joint_index"]),
            error_classes=classes,
            difficulty=difficulty,
            free_text=str(doc.get("free_text", "")),
            source=str(doc.get("source", "flagged")),
            timestamp=float(doc.get("timestamp", time.time())),
        )
    except (KeyError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=f"malformed verdict: {exc}") from exc


def create_app(
    store: VerdictStore,
    queue: ReviewQueue,
    image_root: Optional[Path] = None,
    image_files: Optional[Dict[str, str]] = None,
    flagged_keys: Optional[Iterable[Tuple[str, Optional[int]]]] = None,
) -> FastAPI:
    app = FastAPI(title="kpclean review service")
    flagged = set(flagged_keys) if flagged_keys is not None else None
    files = image_files or {}

    @app.get("/api/tasks/next")
    def next_task(annotator: str = Query(..., min_length=1)):
        task = queue.next_task(annotator)
        if task is None:
            return {"done": True}
        return {"done": False, "task": task.to_dict()}

    @app.post("/api/verdicts")
    async def submit_verdicts(request: Request):
        body = await request.json()
        batch = body if isinstance(body, list) else [body]
        results = []
        for doc in batch:
            verdict = _verdict_from_payload(doc)
            task = queue.task_for_pose(verdict.pose_id)
            if task is None:
                raise HTTPException(status_code=404, detail=f"no task for pose {verdict.pose_id!r}")
            if not queue.was_served(verdict.pose_id, verdict.annotator_id):
                raise HTTPException(
                    status_code=409,
                    detail=f"task for pose {verdict.pose_id!r} was not served to {verdict.annotator_id!r}",
                )
            stored = store.submit(verdict)
            queue.mark_judged(task.task_id, verdict.annotator_id)
            results.append({"verdict_id": verdict.verdict_id, "stored": stored})
        return {"accepted": True, "results": results}

    @app.get("/api/verdicts")
    def export_verdicts(source: Optional[str] = None, annotator: Optional[str] = None):
        return [v.to_dict() for v in store.export(source=source, annotator_id=annotator)]

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        if image_root is None:
            raise HTTPException(status_code=404, detail="no image root configured")
        file_name = files.get(image_id, image_id)
        path = (image_root / file_name).resolve()
        if not str(path).startswith(str(image_root.resolve())):
            raise HTTPException(status_code=400, detail="invalid image path")
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"image {image_id!r} not found")
        return FileResponse(path)

    @app.get("/api/reports/precision-recall")
    def precision_recall():
        if not flagged:
            raise HTTPException(status_code=400, detail="service started without flagged keypoints")
        verdicts = store.export()
        if not verdicts:
            raise HTTPException(status_code=400, detail="no verdicts stored yet")
        try:
            diagnostics = detector_diagnostics(flagged, verdicts)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return diagnostics.to_dict()

    @app.exception_handler(ValueError)
    async def value_error_handler(_request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    return app
