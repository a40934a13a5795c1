"""HTTP surface: auth, lifecycle, grading flow, and the timing contract."""

from __future__ import annotations

import csv
import io
import re

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from gradepipe.highlight import HighlightSet
from gradepipe.identity import IdentityMapping, RosterEntry
from gradepipe.ingest import PageBundle, load_page_image
from gradepipe.layout import QuestionRegion
from gradepipe.service import create_app
from gradepipe.store import Store

from conftest import wb


class StepClock:
    """Monotonic test clock: every read advances by a fixed step."""

    def __init__(self, start: int = 1_000_000, step: int = 30_000):
        self.now = start
        self.step = step

    def __call__(self) -> int:
        t = self.now
        self.now += self.step
        return t


def sheet_bundle(tmp_path, bundle_id: str, kind: str = "answer_sheet",
                 value: int = 250, size=(200, 300)) -> PageBundle:
    root = tmp_path / bundle_id
    root.mkdir(exist_ok=True)
    path = root / "page-0.png"
    Image.fromarray(np.full((size[1], size[0]), value, dtype=np.uint8)).save(path)
    return PageBundle(bundle_id=bundle_id, kind=kind,
                      pages=[load_page_image(path, 0)])


def region(qid: str, order: int, y0: int, y1: int,
           qtype: str = "short") -> QuestionRegion:
    return QuestionRegion(question_id=qid, order=order, page_index=0,
                          x0=10, y0=y0, x1=190, y1=y1, text=f"{qid}?",
                          question_type=qtype, confirmed=True)


class Rig:
    def __init__(self, store: Store, client: TestClient, clock: StepClock):
        self.store = store
        self.client = client
        self.clock = clock
        self.halves = store.split_halves("e1")

    def get(self, path: str, token: str, **kw):
        return self.client.get(
            path, headers={"Authorization": f"Bearer {token}"}, **kw)

    def post(self, path: str, token: str, **kw):
        return self.client.post(
            path, headers={"Authorization": f"Bearer {token}"}, **kw)

    def put(self, path: str, token: str, **kw):
        return self.client.put(
            path, headers={"Authorization": f"Bearer {token}"}, **kw)


@pytest.fixture
def rig(store, tmp_path) -> Rig:
    """Exam e1, open for grading: 2 questions, 4 mapped sheets, split 2/2."""
    store.create_exam("e1", "Service Exam")
    store.add_bundle("e1", sheet_bundle(tmp_path, "qp", kind="question_paper"))
    for b in ("s1", "s2", "s3", "s4"):
        store.add_bundle("e1", sheet_bundle(tmp_path, b))
    store.set_roster("e1", [RosterEntry(f"{i}{i}{i}", f"name{i}")
                            for i in range(1, 5)])
    store.save_mappings("e1", [
        IdentityMapping(f"s{i}", f"{i}{i}{i}", f"name{i}", f"{i}{i}{i}",
                        0, "auto") for i in range(1, 5)])
    store.save_questions("e1", [region("q1", 1, 20, 60),
                                region("q2", 2, 100, 140, qtype="long")], 0)
    store.set_keywords("e1", [
        {"question_id": "q1", "keywords": ["cache"], "max_score": 5,
         "rubric": "1pt per property"},
        {"question_id": "q2", "keywords": ["tree"]},
    ])
    store.assign_split("e1", seed=11)
    store.add_user("i1", "Ines", "instructor", "itok")
    store.add_user("g1", "Gil", "grader", "g1tok")
    store.add_user("g2", "Gus", "grader", "g2tok")
    store.assign_grader("e1", "g1", ["q1", "q2"])
    store.assign_grader("e1", "g2", ["q1"])
    store.open_grading("e1")
    clock = StepClock()
    client = TestClient(create_app(store, clock=clock))
    return Rig(store, client, clock)


# -- auth ---------------------------------------------------------------------


def test_requests_without_token_rejected(rig):
    assert rig.client.get("/exams").status_code == 401
    bad = rig.client.get("/exams", headers={"Authorization": "Bearer nope"})
    assert bad.status_code == 401


def test_role_separation(rig):
    # Instructor endpoints reject graders outright.
    assert rig.get("/exams/e1/keywords", "g1tok").status_code == 403
    assert rig.get("/exams/e1/events.csv", "g1tok").status_code == 403
    assert rig.post("/exams/e1/open", "g1tok").status_code == 403
    # Grader endpoints reject instructors.
    assert rig.get("/exams/e1/next?question=q1", "itok").status_code == 403
    # Grader can only pull questions assigned to them.
    assert rig.get("/exams/e1/next?question=q2", "g2tok").status_code == 403


def test_unknown_exam_is_404(rig):
    assert rig.get("/exams/ghost", "itok").status_code == 404


# -- exam administration --------------------------------------------------------


def test_create_and_get_exam(rig):
    created = rig.post("/exams", "itok",
                       json={"exam_id": "e2", "name": "Second"})
    assert created.status_code == 201
    dup = rig.post("/exams", "itok", json={"exam_id": "e2", "name": "Again"})
    assert dup.status_code == 409
    exam = rig.get("/exams/e1", "itok").json()
    assert exam["grading_open"] is True
    assert [q["question_id"] for q in exam["questions"]] == ["q1", "q2"]
    as_grader = rig.get("/exams/e1", "g2tok").json()
    assert as_grader["assigned_questions"] == ["q1"]


def test_put_questions_version_conflict(rig):
    current = rig.get("/exams/e1/questions", "itok").json()
    stale = {"base_version": current["version"] - 1,
             "questions": current["questions"]}
    assert rig.put("/exams/e1/questions", "itok", json=stale).status_code == 409
    fresh = {"base_version": current["version"],
             "questions": current["questions"]}
    ok = rig.put("/exams/e1/questions", "itok", json=fresh)
    assert ok.status_code == 200
    assert ok.json()["version"] == current["version"] + 1


def test_put_questions_validates_bounds(rig):
    current = rig.get("/exams/e1/questions", "itok").json()
    bad = dict(current["questions"][0], y1=9000)
    body = {"base_version": current["version"],
            "questions": [bad, current["questions"][1]]}
    assert rig.put("/exams/e1/questions", "itok", json=body).status_code == 422


def test_confirm_endpoint(rig, store):
    rig.post("/exams", "itok", json={"exam_id": "e3", "name": "T"})
    assert rig.post("/exams/e3/questions/confirm", "itok").status_code == 412
    body = {"base_version": 0, "questions": [{
        "question_id": "q1", "order": 1, "page_index": 0,
        "x0": 0, "y0": 0, "x1": 50, "y1": 40}]}
    rig.put("/exams/e3/questions", "itok", json=body)
    out = rig.post("/exams/e3/questions/confirm", "itok")
    assert out.status_code == 200 and out.json()["confirmed"] == 1
    regions, _ = store.get_questions("e3")
    assert all(r.confirmed for r in regions)


def test_mappings_endpoints(rig):
    listing = rig.get("/exams/e1/mappings", "itok").json()["mappings"]
    assert {m["bundle_id"] for m in listing} == {"s1", "s2", "s3", "s4"}
    assert listing[0]["matched_name"] == "name1"
    out = rig.put("/exams/e1/mappings", "itok",
                  json={"bundle_id": "s1", "roll": None})
    assert out.json()["status"] == "unmapped"
    back = rig.put("/exams/e1/mappings", "itok",
                   json={"bundle_id": "s1", "roll": "111"})
    assert back.json()["status"] == "manual"
    steal = rig.put("/exams/e1/mappings", "itok",
                    json={"bundle_id": "s1", "roll": "222"})
    assert steal.status_code == 409


def test_keywords_round_trip(rig):
    body = [{"question_id": "q1", "keywords": ["lru", "eviction"],
             "max_score": 4, "rubric": "any two"}]
    assert rig.put("/exams/e1/keywords", "itok", json=body).status_code == 200
    entries = rig.get("/exams/e1/keywords", "itok").json()["keywords"]
    q1 = next(e for e in entries if e["question_id"] == "q1")
    assert q1["keywords"] == ["lru", "eviction"] and q1["max_score"] == 4


def test_open_preconditions_over_http(rig, store, tmp_path):
    rig.post("/exams", "itok", json={"exam_id": "e4", "name": "T"})
    assert rig.post("/exams/e4/open", "itok").status_code == 412
    assert rig.post("/exams/e4/split", "itok",
                    json={"seed": 1}).status_code == 412


# -- grading flow and the timing contract ---------------------------------------


TIMING_KEY = re.compile(r"(?i)(served|submitted|duration|elapsed|timer|_ms\b)")


def timing_keys(payload) -> list[str]:
    found = []
    if isinstance(payload, dict):
        for key, value in payload.items():
            if TIMING_KEY.search(key):
                found.append(key)
            found.extend(timing_keys(value))
    elif isinstance(payload, list):
        for item in payload:
            found.extend(timing_keys(item))
    return found


def test_grading_flow_times_on_server(rig):
    grader_payloads = []
    served, graded = [], []
    while True:
        nxt = rig.get("/exams/e1/next?question=q1", "g1tok")
        if nxt.status_code == 204:
            break
        assert nxt.status_code == 200
        payload = nxt.json()
        grader_payloads.append(payload)
        served.append(payload["bundle_id"])
        assert payload["crop_url"].startswith(f"/crops/{payload['bundle_id']}/")
        assert payload["rubric"] == "1pt per property"
        assert payload["max_score"] == 5
        out = rig.post("/exams/e1/grades", "g1tok",
                       json={"bundle_id": payload["bundle_id"],
                             "question_id": "q1", "score": 3.0})
        assert out.status_code == 201
        grader_payloads.append(out.json())
        graded.append(out.json()["bundle_id"])
    assert served == graded and len(served) == 4
    assert served == rig.store.queue_order("e1")

    # No grader-facing payload carries any timing field.
    for payload in grader_payloads:
        assert timing_keys(payload) == [], payload

    # Server-side events carry the clock's serve/submit pairs exactly.
    events = sorted(rig.store.list_events("e1"), key=lambda e: e.event_id)
    start, step = 1_000_000, 30_000
    for i, event in enumerate(events):
        assert event.served_at_ms == start + 2 * i * step
        assert event.submitted_at_ms == start + (2 * i + 1) * step
        assert event.duration_ms == step


def test_grader_facing_reads_carry_no_timing(rig):
    for path in ("/exams", "/exams/e1", "/exams/e1/questions",
                 "/exams/e1/mappings"):
        payload = rig.get(path, "g1tok").json()
        assert timing_keys(payload) == [], path


def test_two_graders_never_share_a_serve(rig):
    first = rig.get("/exams/e1/next?question=q1", "g1tok").json()
    second = rig.get("/exams/e1/next?question=q1", "g2tok").json()
    assert first["bundle_id"] != second["bundle_id"]
    hijack = rig.get(
        f"/exams/e1/next?question=q1&bundle={first['bundle_id']}", "g2tok")
    assert hijack.status_code == 409


def test_grade_without_serve_rejected(rig):
    out = rig.post("/exams/e1/grades", "g1tok",
                   json={"bundle_id": "s1", "question_id": "q1", "score": 1.0})
    assert out.status_code == 409


def test_score_out_of_range_rejected(rig):
    nxt = rig.get("/exams/e1/next?question=q1", "g1tok").json()
    out = rig.post("/exams/e1/grades", "g1tok",
                   json={"bundle_id": nxt["bundle_id"],
                         "question_id": "q1", "score": 5.5})
    assert out.status_code == 422


def test_regrade_flag(rig):
    nxt = rig.get("/exams/e1/next?question=q1", "g1tok").json()
    b = nxt["bundle_id"]
    rig.post("/exams/e1/grades", "g1tok",
             json={"bundle_id": b, "question_id": "q1", "score": 2.0})
    # Plain resubmission has no serve behind it.
    again = rig.post("/exams/e1/grades", "g1tok",
                     json={"bundle_id": b, "question_id": "q1", "score": 4.0})
    assert again.status_code == 409
    fixed = rig.post("/exams/e1/grades", "g1tok",
                     json={"bundle_id": b, "question_id": "q1", "score": 4.0,
                           "regrade": True})
    assert fixed.status_code == 201
    events = [e for e in rig.store.list_events("e1") if e.bundle_id == b]
    assert [e.superseded for e in sorted(events, key=lambda e: e.event_id)] \
        == [True, False]


def test_events_csv_export(rig):
    nxt = rig.get("/exams/e1/next?question=q1", "g1tok").json()
    rig.post("/exams/e1/grades", "g1tok",
             json={"bundle_id": nxt["bundle_id"], "question_id": "q1",
                   "score": 3.0})
    out = rig.get("/exams/e1/events.csv", "itok")
    assert out.status_code == 200
    assert out.headers["content-type"].startswith("text/csv")
    rows = list(csv.DictReader(io.StringIO(out.text)))
    assert list(rows[0]) == ["event_id", "grader_id", "bundle_id",
                             "question_id", "question_type", "split", "score",
                             "max_score", "served_at_ms", "submitted_at_ms",
                             "duration_ms", "superseded"]
    assert rows[0]["duration_ms"] == "30000"
    assert rows[0]["question_type"] == "short"


def test_report_endpoint(rig):
    ha = [b for b, h in rig.halves.items() if h == "ha"]
    for b in ha:
        rig.store.set_classification("e1", b, "h")
    for q in ("q1", "q2"):
        while True:
            nxt = rig.get(f"/exams/e1/next?question={q}", "g1tok")
            if nxt.status_code == 204:
                break
            rig.post("/exams/e1/grades", "g1tok",
                     json={"bundle_id": nxt.json()["bundle_id"],
                           "question_id": q, "score": 1.0})
    out = rig.get("/exams/e1/report", "itok")
    assert out.status_code == 200
    payload = out.json()
    assert {r["question_id"] for r in payload["per_question"]} == {"q1", "q2"}
    assert "avg_reduction_per_response_pct" in payload["summary"]
    # With a stepping clock every duration is equal, so no reduction.
    assert payload["summary"]["avg_reduction_per_response_pct"] == 0.0
    assert rig.get("/exams/e1/report?sheet_trim=bogus",
                   "itok").status_code == 422


# -- images ---------------------------------------------------------------------


PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_page_png(rig):
    out = rig.get("/pages/s1/0.png", "g1tok")
    assert out.status_code == 200
    assert out.content.startswith(PNG_MAGIC)
    assert rig.get("/pages/s1/7.png", "g1tok").status_code == 404
    assert rig.get("/pages/ghost/0.png", "g1tok").status_code == 404


def test_crop_png_plain_and_highlighted(rig):
    ha = next(b for b, h in rig.halves.items() if h == "ha")
    hna = next(b for b, h in rig.halves.items() if h == "hna")
    hs = HighlightSet(question_id="q1", bundle_id=ha,
                      matches=[(wb("cache", 2, 2, 30, 12), "cache")])
    rig.store.save_highlight("e1", hs)
    # Same highlight stored for an unassisted sheet must never render.
    rig.store.save_highlight("e1", HighlightSet(
        question_id="q1", bundle_id=hna,
        matches=[(wb("cache", 2, 2, 30, 12), "cache")]))

    plain = rig.get(f"/crops/{hna}/q1.png", "g1tok")
    lit = rig.get(f"/crops/{ha}/q1.png", "g1tok")
    assert plain.status_code == 200 and lit.status_code == 200
    plain_px = np.asarray(Image.open(io.BytesIO(plain.content)).convert("RGB"))
    lit_px = np.asarray(Image.open(io.BytesIO(lit.content)).convert("RGB"))
    assert plain_px.shape == lit_px.shape
    assert (plain_px == 250).all(), "unassisted crop must be untouched"
    assert (lit_px != plain_px).any(), "assisted crop must show the overlay"
    assert rig.get(f"/crops/{ha}/q9.png", "g1tok").status_code == 404


def test_degenerate_crop_points_to_whole_page(rig, store):
    # Push q2's box to the bottom margin so its strip collapses.
    current = rig.get("/exams/e1/questions", "itok").json()
    qs = [dict(q) for q in current["questions"]]
    qs[1]["y1"] = 295
    rig.put("/exams/e1/questions", "itok",
            json={"base_version": current["version"], "questions": qs})
    out = rig.get("/crops/s1/q2.png", "g1tok")
    assert out.status_code == 409
    assert "/pages/s1/0.png" in out.json()["detail"]


# -- static frontend ------------------------------------------------------------


def test_static_mount_serves_frontend(store, tmp_path):
    web = tmp_path / "web"
    web.mkdir()
    (web / "index.html").write_text("<!doctype html><title>g</title>ok")
    client = TestClient(create_app(store, frontend_dir=web))
    out = client.get("/app/", follow_redirects=True)
    assert out.status_code == 200 and "ok" in out.text
    bare = TestClient(create_app(store))
    assert bare.get("/app/").status_code == 404
