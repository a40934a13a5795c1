"""HTTP grading service.

Serves submissions to graders one at a time and times each grade on the
server between serve and submit, using a monotonic clock. Grader-facing
responses never carry timing fields; the event log with timings is an
instructor-only export. The clock is injectable so tests can drive it.
"""

from __future__ import annotations

import io
import logging
import time
from pathlib import Path
from typing import Callable

import numpy as np
from fastapi import Depends, FastAPI, Header, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from . import analytics
from .errors import (
    AuthError,
    ConflictError,
    GradePipeError,
    NotFoundError,
    PreconditionError,
    StateError,
    ValidationError,
)
from .identity import RosterEntry
from .layout import QuestionRegion, validate_regions
from .regions import crop, deduce_answer_regions
from .highlight import render_highlights
from .store import Store

logger = logging.getLogger(__name__)

ClockMs = Callable[[], int]


def monotonic_ms() -> int:
    return time.monotonic_ns() // 1_000_000


def _png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


# -- request bodies ------------------------------------------------------

class ExamIn(BaseModel):
    exam_id: str
    name: str = ""


class QuestionIn(BaseModel):
    question_id: str
    order: int
    page_index: int
    x0: int
    y0: int
    x1: int
    y1: int
    text: str = ""
    question_type: str = "short"
    confirmed: bool = False


class QuestionsIn(BaseModel):
    base_version: int
    questions: list[QuestionIn]


class MappingIn(BaseModel):
    bundle_id: str
    roll: str | None = None


class KeywordEntryIn(BaseModel):
    question_id: str
    keywords: list[str] = []
    max_score: float = 10.0
    rubric: str = ""


class RosterIn(BaseModel):
    entries: list[dict]


class SplitIn(BaseModel):
    seed: int


class GraderIn(BaseModel):
    grader_id: str
    question_ids: list[str]


class GradeIn(BaseModel):
    bundle_id: str
    question_id: str
    score: float
    regrade: bool = False


def _region_to_dict(r: QuestionRegion) -> dict:
    return {"question_id": r.question_id, "order": r.order,
            "page_index": r.page_index, "x0": r.x0, "y0": r.y0,
            "x1": r.x1, "y1": r.y1, "text": r.text,
            "question_type": r.question_type, "confirmed": r.confirmed}


def create_app(store: Store, clock: ClockMs | None = None,
               frontend_dir: Path | None = None) -> FastAPI:
    clock = clock or monotonic_ms
    app = FastAPI(title="gradepipe", docs_url=None, redoc_url=None)

    # -- auth --------------------------------------------------------

    def current_user(authorization: str | None = Header(default=None)) -> dict:
        if not authorization or not authorization.startswith("Bearer "):
            raise AuthError("missing bearer token")
        user = store.user_by_token(authorization[len("Bearer "):].strip())
        if user is None:
            raise AuthError("unknown token")
        return user

    def instructor(user: dict = Depends(current_user)) -> dict:
        if user["role"] != "instructor":
            raise AuthError("instructor role required", forbidden=True)
        return user

    def grader(user: dict = Depends(current_user)) -> dict:
        if user["role"] != "grader":
            raise AuthError("grader role required", forbidden=True)
        return user

    # -- error mapping -------------------------------------------------

    _STATUS = [
        (AuthError, 401),
        (NotFoundError, 404),
        (ConflictError, 409),
        (StateError, 409),
        (PreconditionError, 412),
        (ValidationError, 422),
    ]

    @app.exception_handler(GradePipeError)
    def handle_domain_error(request: Request, exc: GradePipeError):
        status = 500
        for klass, code in _STATUS:
            if isinstance(exc, klass):
                status = code
                break
        if isinstance(exc, AuthError) and getattr(exc, "forbidden", False):
            status = 403
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    # -- exam administration ---------------------------------------------

    @app.post("/exams", status_code=201)
    def create_exam(body: ExamIn, user: dict = Depends(instructor)):
        store.create_exam(body.exam_id, body.name)
        return {"exam_id": body.exam_id, "name": body.name}

    @app.get("/exams")
    def list_exams(user: dict = Depends(current_user)):
        return {"exams": store.list_exams()}

    @app.get("/exams/{exam_id}")
    def get_exam(exam_id: str, user: dict = Depends(current_user)):
        exam = store.get_exam(exam_id)
        regions, version = store.get_questions(exam_id)
        out = {
            "exam_id": exam["exam_id"],
            "name": exam["name"],
            "grading_open": bool(exam["grading_open"]),
            "questions_version": version,
            "questions": [_region_to_dict(r) for r in regions],
        }
        if user["role"] == "grader":
            out["assigned_questions"] = store.assigned_questions(
                exam_id, user["user_id"])
        return out

    # -- question regions --------------------------------------------

    @app.get("/exams/{exam_id}/questions")
    def get_questions(exam_id: str, user: dict = Depends(current_user)):
        regions, version = store.get_questions(exam_id)
        return {"version": version,
                "questions": [_region_to_dict(r) for r in regions]}

    @app.put("/exams/{exam_id}/questions")
    def put_questions(exam_id: str, body: QuestionsIn,
                      user: dict = Depends(instructor)):
        regions = [QuestionRegion(**q.model_dump()) for q in body.questions]
        if regions:
            bundles = store.list_bundles(exam_id, kind="question_paper")
            if bundles:
                dims = store.page_dims(bundles[0]["bundle_id"])
                validate_regions(regions, dims)
        version = store.save_questions(exam_id, regions, body.base_version)
        return {"version": version}

    @app.post("/exams/{exam_id}/questions/confirm")
    def confirm_questions(exam_id: str, user: dict = Depends(instructor)):
        regions, version = store.get_questions(exam_id)
        if not regions:
            raise PreconditionError("no question regions to confirm")
        bundles = store.list_bundles(exam_id, kind="question_paper")
        if bundles:
            dims = store.page_dims(bundles[0]["bundle_id"])
            validate_regions(regions, dims)
        confirmed = [QuestionRegion(**{**_region_to_dict(r), "confirmed": True})
                     for r in regions]
        version = store.save_questions(exam_id, confirmed, version)
        return {"version": version, "confirmed": len(confirmed)}

    # -- roster and identity mappings ---------------------------------

    @app.put("/exams/{exam_id}/roster")
    def put_roster(exam_id: str, body: RosterIn,
                   user: dict = Depends(instructor)):
        entries = [RosterEntry(roll=e["roll"], name=e.get("name", ""))
                   for e in body.entries]
        store.set_roster(exam_id, entries)
        return {"count": len(entries)}

    @app.get("/exams/{exam_id}/mappings")
    def get_mappings(exam_id: str, user: dict = Depends(current_user)):
        mappings = store.get_mappings(exam_id)
        roster = {e.roll: e.name for e in store.get_roster(exam_id)}
        return {"mappings": [{
            "bundle_id": m.bundle_id,
            "roll_candidate": m.roll_candidate,
            "name_candidate": m.name_candidate,
            "matched_roll": m.matched_roll,
            "matched_name": roster.get(m.matched_roll or "", ""),
            "edit_distance": m.edit_distance,
            "status": m.status,
        } for m in mappings]}

    @app.put("/exams/{exam_id}/mappings")
    def put_mapping(exam_id: str, body: MappingIn,
                    user: dict = Depends(instructor)):
        updated = store.update_mapping(exam_id, body.bundle_id, body.roll)
        return {"bundle_id": updated.bundle_id,
                "matched_roll": updated.matched_roll,
                "status": updated.status}

    # -- keywords ------------------------------------------------------

    @app.get("/exams/{exam_id}/keywords")
    def get_keywords(exam_id: str, user: dict = Depends(instructor)):
        return {"keywords": store.get_keywords(exam_id)}

    @app.put("/exams/{exam_id}/keywords")
    def put_keywords(exam_id: str, body: list[KeywordEntryIn],
                     user: dict = Depends(instructor)):
        store.set_keywords(exam_id, [e.model_dump() for e in body])
        return {"count": len(body)}

    # -- split and lifecycle -------------------------------------------

    @app.post("/exams/{exam_id}/split")
    def assign_split(exam_id: str, body: SplitIn,
                     user: dict = Depends(instructor)):
        hna, ha = store.assign_split(exam_id, body.seed)
        return {"seed": body.seed, "unassisted": hna, "assisted": ha}

    @app.post("/exams/{exam_id}/graders")
    def assign_grader(exam_id: str, body: GraderIn,
                      user: dict = Depends(instructor)):
        store.assign_grader(exam_id, body.grader_id, body.question_ids)
        return {"grader_id": body.grader_id,
                "question_ids": store.assigned_questions(exam_id, body.grader_id)}

    @app.post("/exams/{exam_id}/open")
    def open_grading(exam_id: str, user: dict = Depends(instructor)):
        store.open_grading(exam_id)
        return {"grading_open": True}

    # -- grading loop ----------------------------------------------------

    @app.get("/exams/{exam_id}/next")
    def next_submission(exam_id: str,
                        question: str = Query(...),
                        bundle: str | None = Query(default=None),
                        user: dict = Depends(grader)):
        assigned = store.assigned_questions(exam_id, user["user_id"])
        if question not in assigned:
            raise AuthError(f"question {question!r} is not assigned to you",
                            forbidden=True)
        bundle_id = store.claim_next(exam_id, user["user_id"], question,
                                     clock(), bundle_id=bundle)
        if bundle_id is None:
            return Response(status_code=204)
        regions, _ = store.get_questions(exam_id)
        region = next((r for r in regions if r.question_id == question), None)
        if region is None:
            raise NotFoundError(f"unknown question {question!r}")
        max_score, rubric = store.question_rubric(exam_id, question)
        # Grader payload carries no timing fields by design.
        return {
            "bundle_id": bundle_id,
            "question_id": question,
            "crop_url": f"/crops/{bundle_id}/{question}.png",
            "whole_page_url": f"/pages/{bundle_id}/{region.page_index}.png",
            "rubric": rubric,
            "max_score": max_score,
        }

    @app.post("/exams/{exam_id}/grades", status_code=201)
    def record_grade(exam_id: str, body: GradeIn,
                     user: dict = Depends(grader)):
        if body.question_id not in store.assigned_questions(
                exam_id, user["user_id"]):
            raise AuthError(
                f"question {body.question_id!r} is not assigned to you",
                forbidden=True)
        if body.regrade:
            result = store.regrade(exam_id, user["user_id"], body.bundle_id,
                                   body.question_id, body.score, clock())
        else:
            result = store.record_grade(exam_id, user["user_id"],
                                        body.bundle_id, body.question_id,
                                        body.score, clock())
        # Timing stays server-side; echo only the grade itself.
        return {"bundle_id": result["bundle_id"],
                "question_id": result["question_id"],
                "score": result["score"],
                "max_score": result["max_score"],
                "status": "recorded"}

    # -- instructor exports ---------------------------------------------

    @app.get("/exams/{exam_id}/events.csv")
    def events_csv(exam_id: str, user: dict = Depends(instructor)):
        events = store.list_events(exam_id)
        return Response(content=analytics.events_csv_text(events),
                        media_type="text/csv")

    @app.get("/exams/{exam_id}/report")
    def report(exam_id: str,
               sheet_trim: str = Query(default="sheet"),
               user: dict = Depends(instructor)):
        # Superseded events stay in: the first pass per (bundle, question)
        # carries the real grading duration even after a regrade.
        events = store.list_events(exam_id)
        rep = analytics.build_report(events, sheet_trim_level=sheet_trim)
        return rep.to_dict()

    # -- images ----------------------------------------------------------

    @app.get("/pages/{bundle_id}/{page_index}.png")
    def page_png(bundle_id: str, page_index: int,
                 user: dict = Depends(current_user)):
        rec = store.get_bundle(bundle_id)
        match = [p for p in rec["pages"] if p["page_index"] == page_index]
        if not match:
            raise NotFoundError(
                f"bundle {bundle_id!r} has no page {page_index}")
        pixels = np.asarray(Image.open(match[0]["file"]))
        return Response(content=_png_bytes(pixels), media_type="image/png")

    @app.get("/crops/{bundle_id}/{question_id}.png")
    def crop_png(bundle_id: str, question_id: str,
                 user: dict = Depends(current_user)):
        rec = store.get_bundle(bundle_id)
        exam_id = rec["exam_id"]
        exam = store.get_exam(exam_id)
        regions, _ = store.get_questions(exam_id)
        dims = store.page_dims(bundle_id)
        answer_regions = deduce_answer_regions(
            regions, dims, bundle_id=bundle_id,
            margin=exam["margin_px"], vertical_offset=exam["vertical_offset"])
        region = next((r for r in answer_regions
                       if r.question_id == question_id), None)
        if region is None:
            raise NotFoundError(f"unknown question {question_id!r}")
        if region.degenerate:
            raise ConflictError(
                f"answer region for {question_id!r} is degenerate; use "
                f"/pages/{bundle_id}/{region.page_index}.png")
        page_rec = next(p for p in rec["pages"]
                        if p["page_index"] == region.page_index)
        from .ingest import load_page_image
        page = load_page_image(Path(page_rec["file"]), region.page_index)
        crop_img = crop(page, region)
        hs = store.get_highlight(exam_id, bundle_id, question_id)
        if (hs is not None and hs.matches
                and store.bundle_half(exam_id, bundle_id) == "ha"):
            crop_img = render_highlights(crop_img, hs)
        return Response(content=_png_bytes(crop_img.pixels), media_type="image/png")

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/app", StaticFiles(directory=str(frontend_dir), html=True),
                  name="app")

    return app
