"""Grading-time evaluation statistics.

Submissions are split into a control half (no highlight attempt, "hna")
and a treatment half ("ha" = "h" with at least one highlight delivered
plus "nh" where recognition found nothing). Statistics compare hna
against h: per-question trimmed means of first-pass grading durations,
per-sheet trimmed means of sheet totals, and unweighted averages of the
per-question reduction percentages, overall and per question type.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import AnalyticsError, ValidationError

SPLIT_HNA = "hna"
SPLIT_H = "h"
SPLIT_NH = "nh"
SPLITS = (SPLIT_HNA, SPLIT_H, SPLIT_NH)

TRIM_FRACTION = 0.05

EVENT_CSV_COLUMNS = [
    "event_id", "grader_id", "bundle_id", "question_id", "question_type",
    "split", "score", "max_score", "served_at_ms", "submitted_at_ms",
    "duration_ms", "superseded",
]


@dataclass(frozen=True)
class EventRecord:
    """One grading action as it appears in the exported event log."""

    event_id: int
    grader_id: str
    bundle_id: str
    question_id: str
    question_type: str
    split: str
    score: float
    max_score: float
    served_at_ms: int
    submitted_at_ms: int
    duration_ms: int
    superseded: bool


def read_events_csv(path: Path | str) -> list[EventRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EVENT_CSV_COLUMNS:
            raise ValidationError(
                f"event log {path} has columns {reader.fieldnames}, "
                f"expected {EVENT_CSV_COLUMNS}"
            )
        for row in reader:
            records.append(EventRecord(
                event_id=int(row["event_id"]),
                grader_id=row["grader_id"],
                bundle_id=row["bundle_id"],
                question_id=row["question_id"],
                question_type=row["question_type"],
                split=row["split"],
                score=float(row["score"]),
                max_score=float(row["max_score"]),
                served_at_ms=int(row["served_at_ms"]),
                submitted_at_ms=int(row["submitted_at_ms"]),
                duration_ms=int(row["duration_ms"]),
                superseded=row["superseded"] == "1",
            ))
    return records


def events_csv_text(records: list[EventRecord]) -> str:
    """Deterministic export: rows ordered by (bundle, question, submitted_at)."""
    ordered = sorted(records, key=lambda r: (r.bundle_id, r.question_id,
                                             r.submitted_at_ms, r.event_id))
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(EVENT_CSV_COLUMNS)
    for r in ordered:
        writer.writerow([
            r.event_id, r.grader_id, r.bundle_id, r.question_id,
            r.question_type, r.split, _fmt_num(r.score), _fmt_num(r.max_score),
            r.served_at_ms, r.submitted_at_ms, r.duration_ms,
            int(r.superseded),
        ])
    return buf.getvalue()


def write_events_csv(path: Path | str, records: list[EventRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(events_csv_text(records))


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(x)


@dataclass(frozen=True)
class EvaluationSplit:
    """Submission grouping for one exam."""

    exam_id: str
    s_hna: frozenset[str]
    s_ha: frozenset[str]
    s_h: frozenset[str]
    s_nh: frozenset[str]
    seed: int

    def validate(self, all_bundles: set[str]) -> None:
        if self.s_hna & self.s_ha:
            raise ValidationError("hna and ha halves intersect")
        if self.s_hna | self.s_ha != set(all_bundles):
            raise ValidationError("halves do not cover the submission set")
        if abs(len(self.s_hna) - len(self.s_ha)) > 1:
            raise ValidationError(
                f"halves unbalanced: {len(self.s_hna)} vs {len(self.s_ha)}")
        if self.s_h & self.s_nh:
            raise ValidationError("h and nh intersect")
        if self.s_h | self.s_nh != self.s_ha:
            raise ValidationError("h and nh do not partition ha")


def split_submissions(bundle_ids: list[str], seed: int) -> tuple[list[str], list[str]]:
    """Seeded uniform shuffle; first ceil(n/2) ids form the no-attempt half."""
    if not bundle_ids:
        raise ValidationError("no submissions to split")
    shuffled = list(bundle_ids)
    random.Random(seed).shuffle(shuffled)
    cut = math.ceil(len(shuffled) / 2)
    return shuffled[:cut], shuffled[cut:]


def trim_indices(values: list[float]) -> list[int]:
    """Surviving indices after dropping the floor(0.05*n) largest values.

    Ties at the cut are resolved by dropping later entries first, so the
    input should be ordered by submission time. Survivor order is the
    input order.
    """
    n = len(values)
    k = int(TRIM_FRACTION * n)
    if k == 0:
        return list(range(n))
    removed = set(sorted(range(n), key=lambda i: (values[i], i), reverse=True)[:k])
    return [i for i in range(n) if i not in removed]


def trim_outliers(values: list[float]) -> list[float]:
    """Drop the top 5% largest values (suspected grading breaks)."""
    return [values[i] for i in trim_indices(values)]


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _reduction_pct(mean_hna: float | None, mean_h: float | None) -> float | None:
    if mean_hna is None or mean_h is None or mean_hna <= 0:
        return None
    return 100.0 * (mean_hna - mean_h) / mean_hna


def question_sort_key(question_id: str):
    parts = re.split(r"(\d+)", question_id)
    return tuple(int(p) if p.isdigit() else p for p in parts)


def first_pass(events: list[EventRecord]) -> dict[tuple[str, str], EventRecord]:
    """The original grading event per (bundle, question); regrades ignored."""
    chosen: dict[tuple[str, str], EventRecord] = {}
    for ev in sorted(events, key=lambda e: (e.submitted_at_ms, e.event_id)):
        chosen.setdefault((ev.bundle_id, ev.question_id), ev)
    return chosen


def split_from_events(events: list[EventRecord], exam_id: str = "",
                      seed: int = 0) -> EvaluationSplit:
    """Recover the split sets from the log's split column."""
    membership: dict[str, str] = {}
    for ev in events:
        if ev.split not in SPLITS:
            raise ValidationError(f"event {ev.event_id}: unknown split {ev.split!r}")
        prior = membership.setdefault(ev.bundle_id, ev.split)
        if prior != ev.split:
            raise ValidationError(
                f"bundle {ev.bundle_id} appears in splits {prior!r} and {ev.split!r}")
    s_hna = frozenset(b for b, s in membership.items() if s == SPLIT_HNA)
    s_h = frozenset(b for b, s in membership.items() if s == SPLIT_H)
    s_nh = frozenset(b for b, s in membership.items() if s == SPLIT_NH)
    return EvaluationSplit(exam_id=exam_id, s_hna=s_hna, s_ha=s_h | s_nh,
                           s_h=s_h, s_nh=s_nh, seed=seed)


@dataclass
class QuestionRow:
    question_id: str
    type: str
    mean_hna_ms: float | None
    mean_h_ms: float | None
    n_hna: int
    n_h: int
    n_nh: int
    reduction_pct: float | None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id, "type": self.type,
            "mean_hna_ms": self.mean_hna_ms, "mean_h_ms": self.mean_h_ms,
            "n_hna": self.n_hna, "n_h": self.n_h, "n_nh": self.n_nh,
            "reduction_pct": self.reduction_pct,
        }


@dataclass
class SheetRow:
    split: str
    mean_sheet_ms: float | None
    n: int
    partial: int

    def to_dict(self) -> dict:
        return {"split": self.split, "mean_sheet_ms": self.mean_sheet_ms,
                "n": self.n, "partial": self.partial}


@dataclass
class Summary:
    avg_reduction_per_response_pct: float
    avg_reduction_per_sheet_pct: float | None
    per_type_reduction_pct: dict[str, float | None]

    def to_dict(self) -> dict:
        return {
            "avg_reduction_per_response_pct": self.avg_reduction_per_response_pct,
            "avg_reduction_per_sheet_pct": self.avg_reduction_per_sheet_pct,
            "per_type_reduction_pct": dict(sorted(self.per_type_reduction_pct.items())),
        }


@dataclass
class EvaluationReport:
    per_question: list[QuestionRow]
    per_sheet: list[SheetRow]
    summary: Summary

    def to_dict(self) -> dict:
        return {
            "per_question": [r.to_dict() for r in self.per_question],
            "per_sheet": [r.to_dict() for r in self.per_sheet],
            "summary": self.summary.to_dict(),
        }


def _question_types(events: list[EventRecord]) -> dict[str, str]:
    types: dict[str, str] = {}
    for ev in events:
        prior = types.setdefault(ev.question_id, ev.question_type)
        if prior != ev.question_type:
            raise ValidationError(
                f"question {ev.question_id} has types {prior!r} and "
                f"{ev.question_type!r} in the log")
    return types


def _split_durations(firsts: dict[tuple[str, str], EventRecord],
                     question_id: str, bundles: frozenset[str]) -> list[int]:
    """First-pass durations for one question restricted to one split,
    ordered by submission time for the trim tie-break."""
    evs = [ev for (b, q), ev in firsts.items()
           if q == question_id and b in bundles]
    evs.sort(key=lambda e: (e.submitted_at_ms, e.event_id))
    return [e.duration_ms for e in evs]


def per_question_stats(events: list[EventRecord],
                       split: EvaluationSplit) -> list[QuestionRow]:
    """Trimmed mean grading time per question, hna vs h.

    nh durations are excluded from both sides: highlighting was attempted
    there but nothing was delivered, so they belong to neither comparison
    group. Questions with an empty side keep a row with null stats.
    """
    firsts = first_pass(events)
    types = _question_types(events)
    rows = []
    for qid in sorted(types, key=question_sort_key):
        hna = trim_outliers(_split_durations(firsts, qid, split.s_hna))
        h = trim_outliers(_split_durations(firsts, qid, split.s_h))
        n_nh = len(_split_durations(firsts, qid, split.s_nh))
        mean_hna, mean_h = _mean(hna), _mean(h)
        rows.append(QuestionRow(
            question_id=qid, type=types[qid],
            mean_hna_ms=mean_hna, mean_h_ms=mean_h,
            n_hna=len(hna), n_h=len(h), n_nh=n_nh,
            reduction_pct=_reduction_pct(mean_hna, mean_h),
        ))
    return rows


def per_sheet_stats(events: list[EventRecord], split: EvaluationSplit,
                    trim_level: str = "sheet") -> list[SheetRow]:
    """Trimmed mean of per-sheet grading totals, hna vs h.

    A sheet's time is the sum of its first-pass durations over every
    question in the log; partially graded sheets are excluded and
    counted. With ``trim_level="sheet"`` (default) the top 5% of sheet
    totals are trimmed per split; with ``"response"`` the per-question
    duration lists are trimmed first and the surviving durations summed,
    with no trimming of the totals.
    """
    if trim_level not in ("sheet", "response"):
        raise ValidationError(f"unknown trim level {trim_level!r}")
    firsts = first_pass(events)
    questions = {q for (_b, q) in firsts}

    surviving: set[tuple[str, str]] = set(firsts)
    if trim_level == "response":
        surviving = set()
        for qid in questions:
            for bundles in (split.s_hna, split.s_h, split.s_nh):
                evs = [ev for (b, q), ev in firsts.items()
                       if q == qid and b in bundles]
                evs.sort(key=lambda e: (e.submitted_at_ms, e.event_id))
                keep = trim_indices([e.duration_ms for e in evs])
                surviving.update((evs[i].bundle_id, qid) for i in keep)

    rows = []
    for split_name, bundles in ((SPLIT_HNA, split.s_hna), (SPLIT_H, split.s_h)):
        totals: list[tuple[int, str, int]] = []
        partial = 0
        for b in bundles:
            graded = {q for (bb, q) in firsts if bb == b}
            if graded != questions:
                partial += 1
                continue
            kept = [firsts[(b, q)] for q in questions if (b, q) in surviving]
            total = sum(e.duration_ms for e in kept)
            last = max((e.submitted_at_ms for e in kept), default=0)
            totals.append((last, b, total))
        totals.sort(key=lambda t: (t[0], t[1]))
        values = [t[2] for t in totals]
        if trim_level == "sheet":
            values = trim_outliers(values)
        rows.append(SheetRow(split=split_name, mean_sheet_ms=_mean(values),
                             n=len(values), partial=partial))
    return rows


def sheet_reduction(rows: list[SheetRow]) -> float | None:
    by_split = {r.split: r.mean_sheet_ms for r in rows}
    return _reduction_pct(by_split.get(SPLIT_HNA), by_split.get(SPLIT_H))


def summary_reductions(question_rows: list[QuestionRow],
                       sheet_reductions: list[float | None]) -> Summary:
    """Unweighted averages of the per-question and per-exam reductions.

    Per-response: mean of reduction_pct over questions where it is
    defined. Per-sheet: mean over exams of the per-sheet reduction. The
    per-type map applies the per-response rule within each question type.
    """
    defined = [r.reduction_pct for r in question_rows if r.reduction_pct is not None]
    if not defined:
        raise AnalyticsError("no question has a defined reduction")
    per_type: dict[str, float | None] = {}
    for row in question_rows:
        per_type.setdefault(row.type, None)
    for qtype in per_type:
        vals = [r.reduction_pct for r in question_rows
                if r.type == qtype and r.reduction_pct is not None]
        per_type[qtype] = _mean(vals)
    sheet_vals = [r for r in sheet_reductions if r is not None]
    return Summary(
        avg_reduction_per_response_pct=_mean(defined),
        avg_reduction_per_sheet_pct=_mean(sheet_vals),
        per_type_reduction_pct=per_type,
    )


def build_report(events: list[EventRecord], split: EvaluationSplit | None = None,
                 sheet_trim_level: str = "sheet") -> EvaluationReport:
    """Full evaluation over one exam's event log.

    Pure: the log is never mutated, and identical inputs produce an
    identical report.
    """
    if not events:
        raise AnalyticsError("empty event log")
    if split is None:
        split = split_from_events(events)
    question_rows = per_question_stats(events, split)
    sheet_rows = per_sheet_stats(events, split, trim_level=sheet_trim_level)
    summary = summary_reductions(question_rows, [sheet_reduction(sheet_rows)])
    return EvaluationReport(per_question=question_rows, per_sheet=sheet_rows,
                            summary=summary)


REPORT_CSV_COLUMNS = ["question_id", "type", "mean_hna_ms", "mean_h_ms",
                      "n_hna", "n_h", "n_nh", "reduction_pct"]


def emit_report(report: EvaluationReport, out_dir: Path | str) -> tuple[Path, Path]:
    """Write report.json and report.csv; byte-identical for equal reports.

    Nulls are serialized explicitly (JSON null, empty CSV cell), never
    omitted.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_COLUMNS)
        for row in report.per_question:
            d = row.to_dict()
            writer.writerow(["" if d[c] is None else d[c] for c in REPORT_CSV_COLUMNS])
    return json_path, csv_path
