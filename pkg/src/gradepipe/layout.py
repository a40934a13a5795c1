"""Question-region detection on blank question-paper pages.

Detection is anchor-token driven: a printed question number (``Q3``,
``7.``, ``2)``) in the left margin band starts a region, which extends
down to the line above the next anchor or to the last text line of the
page. No learned layout model is involved, so results are deterministic.
"""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass, replace

from .errors import AmbiguityError, ValidationError
from .ingest import PageImage

DEFAULT_ANCHOR_PATTERN = r"(?i)^(?:q\d+|\d+\.|\d+\))$"
LEFT_BAND_FRACTION = 0.2
LINE_GROUP_FACTOR = 0.6

QUESTION_TYPES = ("numerical", "short", "long")


@dataclass(frozen=True)
class WordBox:
    """One recognized word with its pixel bounding box."""

    text: str
    x0: int
    y0: int
    x1: int
    y1: int
    confidence: float
    page_index: int = 0

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValidationError(f"degenerate word box for {self.text!r}: "
                                  f"({self.x0},{self.y0},{self.x1},{self.y1})")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0,1] "
                                  f"for {self.text!r}")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def translated(self, dx: int, dy: int) -> WordBox:
        return replace(self, x0=self.x0 + dx, y0=self.y0 + dy,
                       x1=self.x1 + dx, y1=self.y1 + dy)


@dataclass
class QuestionRegion:
    """A detected or instructor-edited question bounding box."""

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

    def __post_init__(self):
        if self.question_type not in QUESTION_TYPES:
            raise ValidationError(
                f"question {self.question_id}: unknown type {self.question_type!r}"
            )

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "order": self.order,
            "page_index": self.page_index,
            "x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1,
            "text": self.text,
            "question_type": self.question_type,
            "confirmed": self.confirmed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> QuestionRegion:
        return cls(**{k: d[k] for k in (
            "question_id", "order", "page_index", "x0", "y0", "x1", "y1",
            "text", "question_type", "confirmed")})


def validate_word_in_page(word: WordBox, width: int, height: int) -> None:
    if word.x0 < 0 or word.y0 < 0 or word.x1 > width or word.y1 > height:
        raise ValidationError(
            f"word {word.text!r} box ({word.x0},{word.y0},{word.x1},{word.y1}) "
            f"exceeds page bounds {width}x{height}"
        )


def group_lines(words: list[WordBox]) -> list[list[WordBox]]:
    """Cluster words into text lines.

    Words whose vertical centers differ by less than 0.6 x the median
    word height on the page belong to one line. Lines come back sorted
    top to bottom, words within a line left to right.
    """
    if not words:
        return []
    tol = LINE_GROUP_FACTOR * statistics.median(w.height for w in words)
    lines: list[list[WordBox]] = []
    for word in sorted(words, key=lambda w: w.center[1]):
        cy = word.center[1]
        if lines:
            line_cy = statistics.fmean(w.center[1] for w in lines[-1])
            if abs(cy - line_cy) < tol:
                lines[-1].append(word)
                continue
        lines.append([word])
    for line in lines:
        line.sort(key=lambda w: (w.x0, w.y0))
    lines.sort(key=lambda ln: min(w.y0 for w in ln))
    return lines


def reading_order(words: list[WordBox]) -> list[WordBox]:
    """Top-to-bottom, left-to-right ordering via line grouping."""
    return [w for line in group_lines(words) for w in line]


def recognize_page(page: PageImage, backend) -> list[WordBox]:
    """Run the text-recognition backend on one page.

    Returns word boxes in reading order; every box is validated against
    the page bounds.
    """
    words = backend.recognize(page)
    for w in words:
        validate_word_in_page(w, page.width, page.height)
    fixed = [replace(w, page_index=page.page_index) for w in words]
    return reading_order(fixed)


def _anchor_key(token: str) -> str:
    digits = "".join(ch for ch in token if ch.isdigit())
    if digits:
        return digits
    return "".join(ch for ch in token.casefold() if ch.isalnum()) or token.casefold()


def detect_question_regions(
    words: list[WordBox],
    page_dims: dict[int, tuple[int, int]],
    pattern: str = DEFAULT_ANCHOR_PATTERN,
    band_fraction: float = LEFT_BAND_FRACTION,
) -> list[QuestionRegion]:
    """Detect one region per anchor token.

    An anchor is a word matching ``pattern`` that starts within the
    leftmost ``band_fraction`` of the page width. Each region spans from
    the top of the anchor's line to the bottom of the line above the next
    anchor (or the last line of the page), and its text is the member
    words concatenated in reading order. No anchors means an empty list;
    duplicate question numbers are an ambiguity error.
    """
    rx = re.compile(pattern)
    regions: list[QuestionRegion] = []
    order = 0
    seen_keys: dict[str, str] = {}
    duplicates: list[str] = []

    for page_index in sorted(page_dims):
        width, _height = page_dims[page_index]
        page_words = [w for w in words if w.page_index == page_index]
        for w in page_words:
            validate_word_in_page(w, *page_dims[page_index])
        lines = group_lines(page_words)

        anchors: list[tuple[int, WordBox]] = []
        for li, line in enumerate(lines):
            in_line = [w for w in line
                       if rx.match(w.text) and w.x0 <= band_fraction * width]
            if len(in_line) > 1:
                raise AmbiguityError(
                    f"page {page_index}: multiple anchors on one line: "
                    + ", ".join(repr(w.text) for w in in_line)
                )
            if in_line:
                anchors.append((li, in_line[0]))

        for ai, (li, anchor) in enumerate(anchors):
            end_li = anchors[ai + 1][0] if ai + 1 < len(anchors) else len(lines)
            member = [w for line in lines[li:end_li] for w in line]
            key = _anchor_key(anchor.text)
            if key in seen_keys:
                duplicates.append(f"{anchor.text!r} duplicates {seen_keys[key]!r}")
                continue
            seen_keys[key] = anchor.text
            order += 1
            regions.append(QuestionRegion(
                question_id=f"q{key}",
                order=order,
                page_index=page_index,
                x0=min(w.x0 for w in member),
                y0=min(w.y0 for w in lines[li]),
                x1=max(w.x1 for w in member),
                y1=max(w.y1 for w in member),
                text=" ".join(w.text for w in member),
            ))

    if duplicates:
        raise AmbiguityError("duplicate question numbers: " + "; ".join(duplicates))
    return regions


def validate_regions(
    regions: list[QuestionRegion], page_dims: dict[int, tuple[int, int]] | None = None
) -> None:
    """Check the confirmed-set invariants.

    Orders must be exactly 1..N and unique; regions with consecutive
    order on the same page must not vertically overlap; boxes must sit
    inside their page.
    """
    orders = sorted(r.order for r in regions)
    if orders != list(range(1, len(regions) + 1)):
        raise ValidationError(f"region orders {orders} are not contiguous 1..{len(regions)}")
    ids = [r.question_id for r in regions]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate question_id in region set")
    by_order = sorted(regions, key=lambda r: r.order)
    for a, b in zip(by_order, by_order[1:]):
        if a.page_index == b.page_index and not (a.y1 <= b.y0 or b.y1 <= a.y0):
            raise ValidationError(
                f"questions {a.question_id} (order {a.order}) and {b.question_id} "
                f"(order {b.order}) vertically overlap on page {a.page_index}"
            )
    for r in regions:
        if not (r.x0 < r.x1 and r.y0 < r.y1):
            raise ValidationError(f"question {r.question_id}: degenerate box")
        if page_dims is not None:
            if r.page_index not in page_dims:
                raise ValidationError(f"question {r.question_id}: unknown page {r.page_index}")
            w, h = page_dims[r.page_index]
            if r.x0 < 0 or r.y0 < 0 or r.x1 > w or r.y1 > h:
                raise ValidationError(
                    f"question {r.question_id}: box outside page {r.page_index} ({w}x{h})"
                )


def apply_edits(regions: list[QuestionRegion], edits: list[dict]) -> list[QuestionRegion]:
    """Apply instructor edits and renumber orders contiguously.

    Each edit is ``{"op": "update"|"delete"|"add", ...}``; updates carry
    the ``question_id`` plus changed fields, adds carry a full ``region``
    payload. Relative order is preserved when orders are compacted.
    """
    by_id = {r.question_id: r for r in regions}
    for edit in edits:
        op = edit.get("op")
        if op == "update":
            qid = edit.get("question_id")
            if qid not in by_id:
                raise ValidationError(f"edit references unknown question {qid!r}")
            current = by_id[qid].to_dict()
            for field in ("order", "page_index", "x0", "y0", "x1", "y1",
                          "text", "question_type"):
                if field in edit:
                    current[field] = edit[field]
            by_id[qid] = QuestionRegion.from_dict(current)
        elif op == "delete":
            qid = edit.get("question_id")
            if qid not in by_id:
                raise ValidationError(f"edit deletes unknown question {qid!r}")
            del by_id[qid]
        elif op == "add":
            region = QuestionRegion.from_dict(edit["region"])
            if region.question_id in by_id:
                raise ValidationError(f"add duplicates question {region.question_id!r}")
            by_id[region.question_id] = region
        else:
            raise ValidationError(f"unknown edit op {op!r}")

    edited = list(by_id.values())
    orders = [r.order for r in edited]
    if len(set(orders)) != len(orders):
        raise ValidationError(f"edits produced duplicate orders {sorted(orders)}")
    edited.sort(key=lambda r: r.order)
    return [replace_order(r, i + 1) for i, r in enumerate(edited)]


def replace_order(region: QuestionRegion, order: int) -> QuestionRegion:
    d = region.to_dict()
    d["order"] = order
    return QuestionRegion.from_dict(d)


def confirm_regions(
    regions: list[QuestionRegion],
    edits: list[dict] | None = None,
    page_dims: dict[int, tuple[int, int]] | None = None,
) -> list[QuestionRegion]:
    """Apply edits, re-validate, and mark every region confirmed.

    Raises without side effects when the edited set violates an
    invariant; persistence is the caller's job so the save stays atomic.
    """
    edited = apply_edits(regions, edits or [])
    validate_regions(edited, page_dims)
    confirmed = []
    for r in edited:
        d = r.to_dict()
        d["confirmed"] = True
        confirmed.append(QuestionRegion.from_dict(d))
    return confirmed
