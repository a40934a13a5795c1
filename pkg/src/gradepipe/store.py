"""Single-file SQLite store for exams, pipeline state, and grade events.

Page images stay on disk; the store keeps their paths and dimensions.
Writes to one (bundle, question) serialize through SQLite's writer lock;
queue claims are taken inside an immediate transaction so two graders of
the same question can never be served the same submission.
"""

from __future__ import annotations

import json
import logging
import sqlite3
from pathlib import Path

from .analytics import EventRecord, EvaluationSplit, split_submissions
from .errors import (
    ConflictError,
    NotFoundError,
    PreconditionError,
    StateError,
    ValidationError,
)
from .identity import IdentityMapping, RosterEntry, correct_mapping
from .ingest import PageBundle, load_page_image
from .layout import QuestionRegion
from .highlight import HighlightSet
from .layout import WordBox

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_SCHEMA = """
CREATE TABLE IF NOT EXISTS exams (
  exam_id TEXT PRIMARY KEY,
  name TEXT NOT NULL,
  grading_open INTEGER NOT NULL DEFAULT 0,
  split_seed INTEGER,
  vertical_offset INTEGER NOT NULL DEFAULT 0,
  margin_px INTEGER NOT NULL DEFAULT 16,
  questions_version INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS bundles (
  bundle_id TEXT PRIMARY KEY,
  exam_id TEXT NOT NULL,
  kind TEXT NOT NULL,
  source_name TEXT NOT NULL DEFAULT ''
);
CREATE TABLE IF NOT EXISTS pages (
  bundle_id TEXT NOT NULL,
  page_index INTEGER NOT NULL,
  file TEXT NOT NULL,
  width INTEGER NOT NULL,
  height INTEGER NOT NULL,
  PRIMARY KEY (bundle_id, page_index)
);
CREATE TABLE IF NOT EXISTS questions (
  exam_id TEXT NOT NULL,
  question_id TEXT NOT NULL,
  ord INTEGER NOT NULL,
  page_index INTEGER NOT NULL,
  x0 INTEGER NOT NULL, y0 INTEGER NOT NULL,
  x1 INTEGER NOT NULL, y1 INTEGER NOT NULL,
  text TEXT NOT NULL DEFAULT '',
  question_type TEXT NOT NULL DEFAULT 'short',
  confirmed INTEGER NOT NULL DEFAULT 0,
  PRIMARY KEY (exam_id, question_id)
);
CREATE TABLE IF NOT EXISTS roster (
  exam_id TEXT NOT NULL,
  pos INTEGER NOT NULL,
  roll TEXT NOT NULL,
  name TEXT NOT NULL,
  PRIMARY KEY (exam_id, roll)
);
CREATE TABLE IF NOT EXISTS mappings (
  exam_id TEXT NOT NULL,
  bundle_id TEXT NOT NULL,
  roll_candidate TEXT NOT NULL DEFAULT '',
  name_candidate TEXT NOT NULL DEFAULT '',
  matched_roll TEXT,
  edit_distance INTEGER NOT NULL DEFAULT 0,
  status TEXT NOT NULL DEFAULT 'unmapped',
  PRIMARY KEY (exam_id, bundle_id)
);
CREATE TABLE IF NOT EXISTS keywords (
  exam_id TEXT NOT NULL,
  question_id TEXT NOT NULL,
  keywords TEXT NOT NULL DEFAULT '[]',
  max_score REAL NOT NULL DEFAULT 10,
  rubric TEXT NOT NULL DEFAULT '',
  PRIMARY KEY (exam_id, question_id)
);
CREATE TABLE IF NOT EXISTS splits (
  exam_id TEXT NOT NULL,
  bundle_id TEXT NOT NULL,
  half TEXT NOT NULL CHECK (half IN ('hna','ha')),
  cls TEXT CHECK (cls IN ('h','nh')),
  PRIMARY KEY (exam_id, bundle_id)
);
CREATE TABLE IF NOT EXISTS highlights (
  exam_id TEXT NOT NULL,
  bundle_id TEXT NOT NULL,
  question_id TEXT NOT NULL,
  attempted INTEGER NOT NULL DEFAULT 0,
  matches TEXT NOT NULL DEFAULT '[]',
  PRIMARY KEY (exam_id, bundle_id, question_id)
);
CREATE TABLE IF NOT EXISTS assignments (
  exam_id TEXT NOT NULL,
  grader_id TEXT NOT NULL,
  question_id TEXT NOT NULL,
  PRIMARY KEY (exam_id, grader_id, question_id)
);
CREATE TABLE IF NOT EXISTS users (
  user_id TEXT PRIMARY KEY,
  name TEXT NOT NULL,
  role TEXT NOT NULL CHECK (role IN ('instructor','grader')),
  token TEXT NOT NULL UNIQUE
);
CREATE TABLE IF NOT EXISTS serves (
  exam_id TEXT NOT NULL,
  bundle_id TEXT NOT NULL,
  question_id TEXT NOT NULL,
  grader_id TEXT NOT NULL,
  served_at_ms INTEGER NOT NULL,
  PRIMARY KEY (exam_id, bundle_id, question_id)
);
CREATE TABLE IF NOT EXISTS events (
  event_id INTEGER PRIMARY KEY AUTOINCREMENT,
  exam_id TEXT NOT NULL,
  grader_id TEXT NOT NULL,
  bundle_id TEXT NOT NULL,
  question_id TEXT NOT NULL,
  score REAL NOT NULL,
  max_score REAL NOT NULL,
  served_at_ms INTEGER NOT NULL,
  submitted_at_ms INTEGER NOT NULL,
  duration_ms INTEGER NOT NULL,
  superseded INTEGER NOT NULL DEFAULT 0
);
"""


class Store:
    def __init__(self, path: Path | str):
        self.path = str(path)
        with self._connect() as conn:
            version = conn.execute("PRAGMA user_version").fetchone()[0]
            if version == 0:
                conn.executescript(_SCHEMA)
                conn.execute(f"PRAGMA user_version = {SCHEMA_VERSION}")
            elif version != SCHEMA_VERSION:
                raise ValidationError(
                    f"store {path} has schema version {version}, "
                    f"expected {SCHEMA_VERSION}")

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path, timeout=30.0)
        conn.row_factory = sqlite3.Row
        return conn

    # -- exams ---------------------------------------------------------

    def create_exam(self, exam_id: str, name: str) -> None:
        with self._connect() as conn:
            try:
                conn.execute("INSERT INTO exams (exam_id, name) VALUES (?, ?)",
                             (exam_id, name))
            except sqlite3.IntegrityError as exc:
                raise ConflictError(f"exam {exam_id!r} already exists") from exc

    def get_exam(self, exam_id: str) -> dict:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM exams WHERE exam_id = ?",
                               (exam_id,)).fetchone()
        if row is None:
            raise NotFoundError(f"unknown exam {exam_id!r}")
        return dict(row)

    def list_exams(self) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute("SELECT * FROM exams ORDER BY exam_id").fetchall()
        return [dict(r) for r in rows]

    def update_exam(self, exam_id: str, **fields) -> None:
        allowed = {"name", "vertical_offset", "margin_px"}
        bad = set(fields) - allowed
        if bad:
            raise ValidationError(f"cannot update exam fields {sorted(bad)}")
        self.get_exam(exam_id)
        sets = ", ".join(f"{k} = ?" for k in fields)
        with self._connect() as conn:
            conn.execute(f"UPDATE exams SET {sets} WHERE exam_id = ?",
                         (*fields.values(), exam_id))

    # -- bundles and pages ---------------------------------------------

    def add_bundle(self, exam_id: str, bundle: PageBundle) -> None:
        self.get_exam(exam_id)
        for page in bundle.pages:
            if page.source_path is None:
                raise ValidationError(
                    f"bundle {bundle.bundle_id}: page {page.page_index} has no "
                    "backing file; only file-backed bundles can be registered")
        with self._connect() as conn:
            try:
                conn.execute(
                    "INSERT INTO bundles (bundle_id, exam_id, kind, source_name) "
                    "VALUES (?, ?, ?, ?)",
                    (bundle.bundle_id, exam_id, bundle.kind, bundle.source_name))
            except sqlite3.IntegrityError as exc:
                raise ConflictError(
                    f"bundle {bundle.bundle_id!r} already registered") from exc
            conn.executemany(
                "INSERT INTO pages (bundle_id, page_index, file, width, height) "
                "VALUES (?, ?, ?, ?, ?)",
                [(bundle.bundle_id, p.page_index, str(p.source_path),
                  p.width, p.height) for p in bundle.pages])

    def get_bundle(self, bundle_id: str) -> dict:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM bundles WHERE bundle_id = ?",
                               (bundle_id,)).fetchone()
            if row is None:
                raise NotFoundError(f"unknown bundle {bundle_id!r}")
            pages = conn.execute(
                "SELECT * FROM pages WHERE bundle_id = ? ORDER BY page_index",
                (bundle_id,)).fetchall()
        out = dict(row)
        out["pages"] = [dict(p) for p in pages]
        return out

    def load_bundle_pages(self, bundle_id: str) -> PageBundle:
        rec = self.get_bundle(bundle_id)
        pages = [load_page_image(Path(p["file"]), p["page_index"])
                 for p in rec["pages"]]
        return PageBundle(bundle_id=rec["bundle_id"], kind=rec["kind"],
                          pages=pages, source_name=rec["source_name"])

    def list_bundles(self, exam_id: str, kind: str | None = None) -> list[dict]:
        self.get_exam(exam_id)
        query = "SELECT * FROM bundles WHERE exam_id = ?"
        args: list = [exam_id]
        if kind is not None:
            query += " AND kind = ?"
            args.append(kind)
        with self._connect() as conn:
            rows = conn.execute(query + " ORDER BY bundle_id", args).fetchall()
        return [dict(r) for r in rows]

    def page_dims(self, bundle_id: str) -> dict[int, tuple[int, int]]:
        rec = self.get_bundle(bundle_id)
        return {p["page_index"]: (p["width"], p["height"]) for p in rec["pages"]}

    # -- questions -----------------------------------------------------

    def get_questions(self, exam_id: str) -> tuple[list[QuestionRegion], int]:
        exam = self.get_exam(exam_id)
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM questions WHERE exam_id = ? ORDER BY ord",
                (exam_id,)).fetchall()
        regions = [QuestionRegion(
            question_id=r["question_id"], order=r["ord"],
            page_index=r["page_index"], x0=r["x0"], y0=r["y0"],
            x1=r["x1"], y1=r["y1"], text=r["text"],
            question_type=r["question_type"], confirmed=bool(r["confirmed"]))
            for r in rows]
        return regions, exam["questions_version"]

    def save_questions(self, exam_id: str, regions: list[QuestionRegion],
                       base_version: int) -> int:
        """Replace the question set atomically.

        ``base_version`` must match the stored version; concurrent saves
        to one exam are rejected, never merged last-writer-wins.
        """
        self.get_exam(exam_id)
        with self._connect() as conn:
            conn.execute("BEGIN IMMEDIATE")
            current = conn.execute(
                "SELECT questions_version FROM exams WHERE exam_id = ?",
                (exam_id,)).fetchone()[0]
            if current != base_version:
                raise ConflictError(
                    f"question set changed concurrently (version {current}, "
                    f"save was based on {base_version})")
            conn.execute("DELETE FROM questions WHERE exam_id = ?", (exam_id,))
            conn.executemany(
                "INSERT INTO questions (exam_id, question_id, ord, page_index, "
                "x0, y0, x1, y1, text, question_type, confirmed) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                [(exam_id, r.question_id, r.order, r.page_index, r.x0, r.y0,
                  r.x1, r.y1, r.text, r.question_type, int(r.confirmed))
                 for r in regions])
            new_version = current + 1
            conn.execute("UPDATE exams SET questions_version = ? WHERE exam_id = ?",
                         (new_version, exam_id))
        return new_version

    # -- roster and mappings -------------------------------------------

    def set_roster(self, exam_id: str, entries: list[RosterEntry]) -> None:
        self.get_exam(exam_id)
        with self._connect() as conn:
            conn.execute("DELETE FROM roster WHERE exam_id = ?", (exam_id,))
            conn.executemany(
                "INSERT INTO roster (exam_id, pos, roll, name) VALUES (?, ?, ?, ?)",
                [(exam_id, i, e.roll, e.name) for i, e in enumerate(entries)])

    def get_roster(self, exam_id: str) -> list[RosterEntry]:
        self.get_exam(exam_id)
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT roll, name FROM roster WHERE exam_id = ? ORDER BY pos",
                (exam_id,)).fetchall()
        return [RosterEntry(roll=r["roll"], name=r["name"]) for r in rows]

    def save_mappings(self, exam_id: str, mappings: list[IdentityMapping]) -> None:
        self.get_exam(exam_id)
        with self._connect() as conn:
            conn.execute("DELETE FROM mappings WHERE exam_id = ?", (exam_id,))
            conn.executemany(
                "INSERT INTO mappings (exam_id, bundle_id, roll_candidate, "
                "name_candidate, matched_roll, edit_distance, status) "
                "VALUES (?, ?, ?, ?, ?, ?, ?)",
                [(exam_id, m.bundle_id, m.roll_candidate, m.name_candidate,
                  m.matched_roll, m.edit_distance, m.status) for m in mappings])

    def get_mappings(self, exam_id: str) -> list[IdentityMapping]:
        self.get_exam(exam_id)
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM mappings WHERE exam_id = ? ORDER BY bundle_id",
                (exam_id,)).fetchall()
        return [IdentityMapping(
            bundle_id=r["bundle_id"], roll_candidate=r["roll_candidate"],
            name_candidate=r["name_candidate"], matched_roll=r["matched_roll"],
            edit_distance=r["edit_distance"], status=r["status"]) for r in rows]

    def update_mapping(self, exam_id: str, bundle_id: str,
                       roll: str | None) -> IdentityMapping:
        mappings = self.get_mappings(exam_id)
        roster = self.get_roster(exam_id)
        updated = correct_mapping(mappings, bundle_id, roll, roster)
        self.save_mappings(exam_id, updated)
        return next(m for m in updated if m.bundle_id == bundle_id)

    # -- keywords and rubric -------------------------------------------

    def set_keywords(self, exam_id: str, specs: list[dict]) -> None:
        """specs: [{question_id, keywords, max_score?, rubric?}], normalized."""
        self.get_exam(exam_id)
        with self._connect() as conn:
            for spec in specs:
                conn.execute(
                    "INSERT INTO keywords (exam_id, question_id, keywords, "
                    "max_score, rubric) VALUES (?, ?, ?, ?, ?) "
                    "ON CONFLICT (exam_id, question_id) DO UPDATE SET "
                    "keywords = excluded.keywords, max_score = excluded.max_score, "
                    "rubric = excluded.rubric",
                    (exam_id, spec["question_id"],
                     json.dumps(list(spec.get("keywords", []))),
                     float(spec.get("max_score", 10.0)),
                     spec.get("rubric", "")))

    def get_keywords(self, exam_id: str) -> list[dict]:
        self.get_exam(exam_id)
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM keywords WHERE exam_id = ? ORDER BY question_id",
                (exam_id,)).fetchall()
        return [{"question_id": r["question_id"],
                 "keywords": json.loads(r["keywords"]),
                 "max_score": r["max_score"], "rubric": r["rubric"]}
                for r in rows]

    def question_rubric(self, exam_id: str, question_id: str) -> tuple[float, str]:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT max_score, rubric FROM keywords "
                "WHERE exam_id = ? AND question_id = ?",
                (exam_id, question_id)).fetchone()
        if row is None:
            return 10.0, ""
        return row["max_score"], row["rubric"]

    # -- split and classification --------------------------------------

    def assign_split(self, exam_id: str, seed: int) -> tuple[list[str], list[str]]:
        """Split mapped submissions (in roster order) into the two halves."""
        ordered = self.mapped_bundles_in_roster_order(exam_id)
        if not ordered:
            raise PreconditionError(f"exam {exam_id!r} has no mapped submissions")
        hna, ha = split_submissions(ordered, seed)
        with self._connect() as conn:
            conn.execute("DELETE FROM splits WHERE exam_id = ?", (exam_id,))
            conn.executemany(
                "INSERT INTO splits (exam_id, bundle_id, half) VALUES (?, ?, ?)",
                [(exam_id, b, "hna") for b in hna]
                + [(exam_id, b, "ha") for b in ha])
            conn.execute("UPDATE exams SET split_seed = ? WHERE exam_id = ?",
                         (seed, exam_id))
        return hna, ha

    def split_halves(self, exam_id: str) -> dict[str, str]:
        self.get_exam(exam_id)
        with self._connect() as conn:
            rows = conn.execute("SELECT * FROM splits WHERE exam_id = ?",
                                (exam_id,)).fetchall()
        return {r["bundle_id"]: r["half"] for r in rows}

    def set_classification(self, exam_id: str, bundle_id: str, cls: str) -> None:
        if cls not in ("h", "nh"):
            raise ValidationError(f"unknown classification {cls!r}")
        with self._connect() as conn:
            cur = conn.execute(
                "UPDATE splits SET cls = ? WHERE exam_id = ? AND bundle_id = ? "
                "AND half = 'ha'", (cls, exam_id, bundle_id))
            if cur.rowcount == 0:
                raise StateError(
                    f"bundle {bundle_id!r} is not in the highlight-attempted half")

    def get_split(self, exam_id: str) -> EvaluationSplit:
        exam = self.get_exam(exam_id)
        with self._connect() as conn:
            rows = conn.execute("SELECT * FROM splits WHERE exam_id = ?",
                                (exam_id,)).fetchall()
        if not rows:
            raise StateError(f"exam {exam_id!r} has no split assigned")
        s_hna = frozenset(r["bundle_id"] for r in rows if r["half"] == "hna")
        s_ha = frozenset(r["bundle_id"] for r in rows if r["half"] == "ha")
        s_h = frozenset(r["bundle_id"] for r in rows
                        if r["half"] == "ha" and r["cls"] == "h")
        s_nh = frozenset(r["bundle_id"] for r in rows
                         if r["half"] == "ha" and r["cls"] == "nh")
        return EvaluationSplit(exam_id=exam_id, s_hna=s_hna, s_ha=s_ha,
                               s_h=s_h, s_nh=s_nh,
                               seed=exam["split_seed"] or 0)

    def bundle_half(self, exam_id: str, bundle_id: str) -> str | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT half FROM splits WHERE exam_id = ? AND bundle_id = ?",
                (exam_id, bundle_id)).fetchone()
        return row["half"] if row else None

    def mapped_bundles_in_roster_order(self, exam_id: str) -> list[str]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT m.bundle_id FROM mappings m JOIN roster r "
                "ON r.exam_id = m.exam_id AND r.roll = m.matched_roll "
                "WHERE m.exam_id = ? AND m.status != 'unmapped' "
                "ORDER BY r.pos", (exam_id,)).fetchall()
        return [r["bundle_id"] for r in rows]

    def roll_for_bundle(self, exam_id: str, bundle_id: str) -> str | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT matched_roll FROM mappings "
                "WHERE exam_id = ? AND bundle_id = ?",
                (exam_id, bundle_id)).fetchone()
        return row["matched_roll"] if row else None

    # -- highlights ------------------------------------------------------

    def save_highlight(self, exam_id: str, hs: HighlightSet) -> None:
        matches = [{"text": w.text, "x0": w.x0, "y0": w.y0, "x1": w.x1,
                    "y1": w.y1, "confidence": w.confidence, "keyword": kw}
                   for w, kw in hs.matches]
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO highlights (exam_id, bundle_id, question_id, "
                "attempted, matches) VALUES (?, ?, ?, ?, ?) "
                "ON CONFLICT (exam_id, bundle_id, question_id) DO UPDATE SET "
                "attempted = excluded.attempted, matches = excluded.matches",
                (exam_id, hs.bundle_id, hs.question_id, int(hs.attempted),
                 json.dumps(matches)))

    def get_highlight(self, exam_id: str, bundle_id: str,
                      question_id: str) -> HighlightSet | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM highlights WHERE exam_id = ? AND bundle_id = ? "
                "AND question_id = ?", (exam_id, bundle_id, question_id)).fetchone()
        if row is None:
            return None
        matches = [(WordBox(m["text"], m["x0"], m["y0"], m["x1"], m["y1"],
                            m["confidence"]), m["keyword"])
                   for m in json.loads(row["matches"])]
        return HighlightSet(question_id=question_id, bundle_id=bundle_id,
                            matches=matches, attempted=bool(row["attempted"]))

    # -- users, assignments, grading lifecycle ---------------------------

    def add_user(self, user_id: str, name: str, role: str, token: str) -> None:
        with self._connect() as conn:
            try:
                conn.execute(
                    "INSERT INTO users (user_id, name, role, token) "
                    "VALUES (?, ?, ?, ?)", (user_id, name, role, token))
            except sqlite3.IntegrityError as exc:
                raise ConflictError(f"user {user_id!r} or token already exists") from exc

    def user_by_token(self, token: str) -> dict | None:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM users WHERE token = ?",
                               (token,)).fetchone()
        return dict(row) if row else None

    def assign_grader(self, exam_id: str, grader_id: str,
                      question_ids: list[str]) -> None:
        self.get_exam(exam_id)
        with self._connect() as conn:
            conn.executemany(
                "INSERT OR IGNORE INTO assignments (exam_id, grader_id, question_id) "
                "VALUES (?, ?, ?)",
                [(exam_id, grader_id, q) for q in question_ids])

    def assigned_questions(self, exam_id: str, grader_id: str) -> list[str]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT question_id FROM assignments "
                "WHERE exam_id = ? AND grader_id = ? ORDER BY question_id",
                (exam_id, grader_id)).fetchall()
        return [r["question_id"] for r in rows]

    def open_grading(self, exam_id: str) -> None:
        """Open the exam for grading once the pipeline preconditions hold:
        confirmed questions, every submission mapped, split assigned."""
        regions, _ = self.get_questions(exam_id)
        if not regions or not all(r.confirmed for r in regions):
            raise PreconditionError(
                f"exam {exam_id!r}: question regions are not confirmed")
        mappings = self.get_mappings(exam_id)
        sheets = self.list_bundles(exam_id, kind="answer_sheet")
        mapped = {m.bundle_id for m in mappings if m.status != "unmapped"}
        unmapped = [b["bundle_id"] for b in sheets if b["bundle_id"] not in mapped]
        if not sheets:
            raise PreconditionError(f"exam {exam_id!r}: no answer sheets")
        if unmapped:
            raise PreconditionError(
                f"exam {exam_id!r}: unmapped sheets {unmapped}")
        if not self.split_halves(exam_id):
            raise PreconditionError(f"exam {exam_id!r}: split not assigned")
        with self._connect() as conn:
            conn.execute("UPDATE exams SET grading_open = 1 WHERE exam_id = ?",
                         (exam_id,))

    def grading_open(self, exam_id: str) -> bool:
        return bool(self.get_exam(exam_id)["grading_open"])

    # -- queue, claims, events -------------------------------------------

    def queue_order(self, exam_id: str) -> list[str]:
        """Fixed grading order: roster order within each half, halves
        interleaved so assisted and unassisted sheets alternate."""
        ordered = self.mapped_bundles_in_roster_order(exam_id)
        halves = self.split_halves(exam_id)
        hna = [b for b in ordered if halves.get(b) == "hna"]
        ha = [b for b in ordered if halves.get(b) == "ha"]
        out: list[str] = []
        for i in range(max(len(hna), len(ha))):
            if i < len(hna):
                out.append(hna[i])
            if i < len(ha):
                out.append(ha[i])
        return out

    def claim_next(self, exam_id: str, grader_id: str, question_id: str,
                   now_ms: int, bundle_id: str | None = None) -> str | None:
        """Atomically claim the next ungraded submission for a question.

        Returns the claimed bundle_id, or None when the queue is empty.
        Re-claiming by the same grader restarts its timing; a submission
        claimed by another grader is never handed out twice. Passing
        ``bundle_id`` re-serves that specific submission (the regrade
        path).
        """
        if not self.grading_open(exam_id):
            raise StateError(f"exam {exam_id!r} is not open for grading")
        order = self.queue_order(exam_id)
        with self._connect() as conn:
            conn.execute("BEGIN IMMEDIATE")
            graded = {r["bundle_id"] for r in conn.execute(
                "SELECT bundle_id FROM events WHERE exam_id = ? AND "
                "question_id = ? AND superseded = 0", (exam_id, question_id))}
            claims = {r["bundle_id"]: r["grader_id"] for r in conn.execute(
                "SELECT bundle_id, grader_id FROM serves "
                "WHERE exam_id = ? AND question_id = ?", (exam_id, question_id))}
            if bundle_id is not None:
                if bundle_id not in order:
                    raise NotFoundError(
                        f"bundle {bundle_id!r} is not a mapped submission")
                holder = claims.get(bundle_id)
                if holder is not None and holder != grader_id:
                    raise ConflictError(
                        f"submission {bundle_id!r} is being graded by {holder!r}")
                chosen = bundle_id
            else:
                chosen = None
                for b in order:
                    if b in graded:
                        continue
                    holder = claims.get(b)
                    if holder is not None and holder != grader_id:
                        continue
                    chosen = b
                    break
                if chosen is None:
                    return None
            conn.execute(
                "INSERT INTO serves (exam_id, bundle_id, question_id, grader_id, "
                "served_at_ms) VALUES (?, ?, ?, ?, ?) "
                "ON CONFLICT (exam_id, bundle_id, question_id) DO UPDATE SET "
                "grader_id = excluded.grader_id, served_at_ms = excluded.served_at_ms",
                (exam_id, chosen, question_id, grader_id, now_ms))
        return chosen

    def record_grade(self, exam_id: str, grader_id: str, bundle_id: str,
                     question_id: str, score: float, now_ms: int) -> dict:
        """Persist one grade with its serve-to-submit duration.

        Requires a prior serve by this grader (the serve is consumed). A
        grade over an already-graded submission supersedes the old event
        and keeps it for audit.
        """
        max_score, _ = self.question_rubric(exam_id, question_id)
        if not 0 <= score <= max_score:
            raise ValidationError(
                f"score {score} outside [0, {max_score}] for {question_id}")
        with self._connect() as conn:
            conn.execute("BEGIN IMMEDIATE")
            claim = conn.execute(
                "SELECT * FROM serves WHERE exam_id = ? AND bundle_id = ? "
                "AND question_id = ?", (exam_id, bundle_id, question_id)).fetchone()
            if claim is None or claim["grader_id"] != grader_id:
                raise StateError(
                    f"no active serve of ({bundle_id}, {question_id}) "
                    f"for grader {grader_id!r}")
            served_at = claim["served_at_ms"]
            if now_ms < served_at:
                raise ValidationError("submission time precedes serve time")
            conn.execute(
                "UPDATE events SET superseded = 1 WHERE exam_id = ? AND "
                "bundle_id = ? AND question_id = ? AND superseded = 0",
                (exam_id, bundle_id, question_id))
            cur = conn.execute(
                "INSERT INTO events (exam_id, grader_id, bundle_id, question_id, "
                "score, max_score, served_at_ms, submitted_at_ms, duration_ms, "
                "superseded) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, 0)",
                (exam_id, grader_id, bundle_id, question_id, score, max_score,
                 served_at, now_ms, now_ms - served_at))
            event_id = cur.lastrowid
            conn.execute(
                "DELETE FROM serves WHERE exam_id = ? AND bundle_id = ? "
                "AND question_id = ?", (exam_id, bundle_id, question_id))
        return {"event_id": event_id, "bundle_id": bundle_id,
                "question_id": question_id, "score": score,
                "max_score": max_score}

    def regrade(self, exam_id: str, grader_id: str, bundle_id: str,
                question_id: str, score: float, now_ms: int) -> dict:
        """Supersede an existing grade; errors when there is none.

        Timing comes from an active re-serve when present, else the event
        is stamped at the submission instant with zero duration. Either
        way analytics only ever uses the first event's duration.
        """
        with self._connect() as conn:
            row = conn.execute(
                "SELECT COUNT(*) FROM events WHERE exam_id = ? AND bundle_id = ? "
                "AND question_id = ?", (exam_id, bundle_id, question_id)).fetchone()
        if row[0] == 0:
            raise StateError(
                f"no prior grade for ({bundle_id}, {question_id}); nothing to regrade")
        with self._connect() as conn:
            claim = conn.execute(
                "SELECT * FROM serves WHERE exam_id = ? AND bundle_id = ? "
                "AND question_id = ?", (exam_id, bundle_id, question_id)).fetchone()
        if claim is None or claim["grader_id"] != grader_id:
            self.claim_next(exam_id, grader_id, question_id, now_ms,
                            bundle_id=bundle_id)
        return self.record_grade(exam_id, grader_id, bundle_id, question_id,
                                 score, now_ms)

    def list_events(self, exam_id: str) -> list[EventRecord]:
        """Events joined with question type and split membership, ordered
        deterministically by (bundle, question, submitted_at)."""
        self.get_exam(exam_id)
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT e.*, q.question_type, s.half, s.cls FROM events e "
                "LEFT JOIN questions q ON q.exam_id = e.exam_id "
                "  AND q.question_id = e.question_id "
                "LEFT JOIN splits s ON s.exam_id = e.exam_id "
                "  AND s.bundle_id = e.bundle_id "
                "WHERE e.exam_id = ? "
                "ORDER BY e.bundle_id, e.question_id, e.submitted_at_ms, e.event_id",
                (exam_id,)).fetchall()
        records = []
        for r in rows:
            if r["half"] == "hna":
                split = "hna"
            elif r["half"] == "ha":
                split = r["cls"] or "nh"
            else:
                raise StateError(
                    f"event {r['event_id']}: bundle {r['bundle_id']!r} has no split")
            records.append(EventRecord(
                event_id=r["event_id"], grader_id=r["grader_id"],
                bundle_id=r["bundle_id"], question_id=r["question_id"],
                question_type=r["question_type"] or "short", split=split,
                score=r["score"], max_score=r["max_score"],
                served_at_ms=r["served_at_ms"],
                submitted_at_ms=r["submitted_at_ms"],
                duration_ms=r["duration_ms"], superseded=bool(r["superseded"])))
        return records
