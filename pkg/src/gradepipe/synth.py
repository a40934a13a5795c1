"""Synthetic exam corpora and calibrated event logs.

Pages are drawn as white canvases with one dark rectangle per word, and
every page gets a word sidecar with the exact boxes, so the mock
recognizer "reads" them perfectly. The calibrated event log is built so
the trimmed-mean statistics land on known round numbers: with six sheets
per half the 5% trim drops nothing and the zero-sum jitter keeps every
mean exact.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .analytics import EventRecord, write_events_csv
from .backends import write_sidecar
from .identity import edit_distance
from .ingest import write_manifest
from .layout import WordBox

PAGE_W = 1000
PAGE_H = 1400
WORD_H = 22
INK = 40

NAME_BOX = (300, 10, 690, 60)
ROLL_BOX = (700, 10, 990, 60)

# Calibrated log geometry: 3 long + 4 numerical + 4 short questions,
# 6 sheets per half, so 0.05-trim keeps all six values per cell.
CAL_QUESTION_TYPES = {
    **{f"q{i}": "long" for i in (1, 2, 3)},
    **{f"q{i}": "numerical" for i in (4, 5, 6, 7)},
    **{f"q{i}": "short" for i in (8, 9, 10, 11)},
}
CAL_DURATIONS_MS = {
    "long": {"hna": 20_000, "h": 15_400},        # 23% faster
    "numerical": {"hna": 75_000, "h": 49_500},   # 34% faster
    "short": {"hna": 75_000, "h": 49_500},       # 34% faster
}
CAL_JITTER_MS = [-3_000, 3_000, -1_500, 1_500, 0, 0]
CAL_EXPECT = {
    "per_response": 31.0,
    "per_sheet": 33.0,
    "per_type": {"long": 23.0, "numerical": 34.0, "short": 34.0},
}


def word(text: str, x0: int, y0: int, width: int | None = None,
         height: int = WORD_H, confidence: float = 0.99) -> WordBox:
    w = width if width is not None else max(10, 11 * len(text))
    return WordBox(text=text, x0=x0, y0=y0, x1=x0 + w, y1=y0 + height,
                   confidence=confidence)


def layout_words(texts: list[str], x0: int, y0: int, max_x: int,
                 gap: int = 9, line_gap: int = 12) -> list[WordBox]:
    """Place words left to right, wrapping before max_x."""
    out: list[WordBox] = []
    x, y = x0, y0
    for text in texts:
        w = max(10, 11 * len(text))
        if x + w > max_x and x > x0:
            x = x0
            y += WORD_H + line_gap
        out.append(word(text, x, y, width=w))
        x += w + gap
    return out


def write_page(path: Path, words: list[WordBox],
               width: int = PAGE_W, height: int = PAGE_H) -> None:
    """Draw each word as an ink rectangle; emit the matching sidecar."""
    pixels = np.full((height, width), 255, dtype=np.uint8)
    for wb in words:
        pixels[wb.y0:wb.y1, wb.x0:wb.x1] = INK
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")
    write_sidecar(path, words)


@dataclass
class PaperTruth:
    """Ground-truth geometry of a generated question paper."""

    manifest: Path
    bundle_id: str
    page_dims: dict[int, tuple[int, int]]
    # per question: (order, page_index, line_y0, line_y1, question_type)
    questions: dict[str, tuple[int, int, int, int, str]] = field(default_factory=dict)

    def answer_strip(self, question_id: str,
                     margin: int = 16) -> tuple[int, int, int]:
        """(page_index, y_top, y_bottom) of the deduced answer strip."""
        order, page, _y0, y1, _t = self.questions[question_id]
        below = [q for q in self.questions.values()
                 if q[1] == page and q[2] > y1]
        y_bottom = min(q[2] for q in below) if below \
            else self.page_dims[page][1] - margin
        return page, y1, y_bottom


def default_question_type(order: int) -> str:
    return ("long", "numerical", "short")[(order - 1) % 3]


def make_question_paper(out_dir: Path, bundle_id: str = "paper",
                        n_questions: int = 10, per_page: int = 5,
                        width: int = PAGE_W, height: int = PAGE_H,
                        type_for=default_question_type) -> PaperTruth:
    """A paper with one anchor line per question, evenly spaced."""
    out_dir = Path(out_dir)
    n_pages = -(-n_questions // per_page)
    spacing = (height - 200) // per_page
    truth = PaperTruth(manifest=out_dir / "manifest.json", bundle_id=bundle_id,
                       page_dims={i: (width, height) for i in range(n_pages)})
    page_files: list[Path] = []
    for page_index in range(n_pages):
        words: list[WordBox] = []
        first = page_index * per_page
        for slot in range(per_page):
            order = first + slot + 1
            if order > n_questions:
                break
            y0 = 120 + slot * spacing
            qid = f"q{order}"
            anchor = word(f"Q{order}", 30, y0)
            prompt = layout_words(
                ["describe", f"topic{order}", "briefly"], 140, y0, width - 40)
            words.extend([anchor, *prompt])
            line_y1 = max(w.y1 for w in (anchor, *prompt))
            truth.questions[qid] = (order, page_index, y0, line_y1,
                                    type_for(order))
        path = out_dir / f"page-{page_index}.png"
        write_page(path, words, width, height)
        page_files.append(path)
    write_manifest(truth.manifest, bundle_id, "question_paper", page_files)
    return truth


def make_answer_sheet(out_dir: Path, bundle_id: str, name_text: str,
                      roll_text: str, truth: PaperTruth,
                      answers: dict[str, list[str]],
                      margin: int = 16) -> Path:
    """One sheet laid out on the paper's geometry.

    ``answers`` maps question_id to the words written in its answer
    strip; missing questions stay blank. The identity strip sits above
    the first question region.
    """
    out_dir = Path(out_dir)
    n_pages = len(truth.page_dims)
    per_page_words: dict[int, list[WordBox]] = {i: [] for i in range(n_pages)}

    name_words = layout_words(name_text.split(), NAME_BOX[0] + 10,
                              NAME_BOX[1] + 10, NAME_BOX[2] - 10)
    roll_words = layout_words([roll_text], ROLL_BOX[0] + 10,
                              ROLL_BOX[1] + 10, ROLL_BOX[2] - 10)
    per_page_words[0].extend(name_words + roll_words)

    for qid, texts in answers.items():
        page, y_top, y_bottom = truth.answer_strip(qid, margin)
        placed = layout_words(texts, margin + 30, y_top + 12,
                              truth.page_dims[page][0] - margin - 10)
        if placed and max(w.y1 for w in placed) >= y_bottom:
            raise ValueError(f"{bundle_id}/{qid}: answer overflows its strip")
        per_page_words[page].extend(placed)

    page_files = []
    for page_index in range(n_pages):
        width, height = truth.page_dims[page_index]
        path = out_dir / f"page-{page_index}.png"
        write_page(path, per_page_words[page_index], width, height)
        page_files.append(path)
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, bundle_id, "answer_sheet", page_files)
    return manifest


def distinct_rolls(n: int, seed: int, length: int = 8,
                   min_distance: int = 4) -> list[str]:
    """Seeded numeric roll strings with pairwise edit distance >= 4."""
    rng = random.Random(seed)
    rolls: list[str] = []
    while len(rolls) < n:
        cand = "".join(rng.choice("0123456789") for _ in range(length))
        if all(edit_distance(cand, r) >= min_distance for r in rolls):
            rolls.append(cand)
    return rolls


def corrupt_one_char(text: str, rng: random.Random) -> str:
    pos = rng.randrange(len(text))
    alt = rng.choice([c for c in "0123456789" if c != text[pos]])
    return text[:pos] + alt + text[pos:][1:]


@dataclass
class Corpus:
    """A generated exam: paper, roster, and sheets with known answers."""

    root: Path
    truth: PaperTruth
    roster_csv: Path
    rolls: list[str]
    sheet_manifests: dict[str, Path]
    sheet_rolls: dict[str, str]
    corrupted: list[str]
    answers: dict[str, dict[str, list[str]]]


def make_corpus(root: Path, n_sheets: int = 12, n_questions: int = 10,
                seed: int = 7, n_corrupted: int = 2,
                answers_for=None) -> Corpus:
    """Full synthetic exam under ``root``.

    ``answers_for(sheet_index, question_id) -> list[str]`` controls sheet
    content; the default writes three filler words per question. The last
    ``n_corrupted`` sheets carry a roll with one character flipped, which
    still maps automatically because roster rolls are far apart.
    """
    root = Path(root)
    rng = random.Random(seed)
    truth = make_question_paper(root / "paper", n_questions=n_questions)
    rolls = distinct_rolls(n_sheets, seed)
    roster_csv = root / "roster.csv"
    with open(roster_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["roll", "name"])
        for i, roll in enumerate(rolls, start=1):
            writer.writerow([roll, f"Student {i:02d}"])

    if answers_for is None:
        def answers_for(sheet_index: int, qid: str) -> list[str]:
            return ["answer", "text", f"item{sheet_index}"]

    manifests: dict[str, Path] = {}
    sheet_rolls: dict[str, str] = {}
    corrupted: list[str] = []
    all_answers: dict[str, dict[str, list[str]]] = {}
    for i, roll in enumerate(rolls, start=1):
        bundle_id = f"s{i:02d}"
        written = roll
        if i > n_sheets - n_corrupted:
            written = corrupt_one_char(roll, rng)
            corrupted.append(bundle_id)
        answers = {qid: answers_for(i, qid) for qid in truth.questions}
        answers = {q: a for q, a in answers.items() if a}
        all_answers[bundle_id] = answers
        manifests[bundle_id] = make_answer_sheet(
            root / "sheets" / bundle_id, bundle_id,
            f"Student {i:02d}", written, truth, answers)
        sheet_rolls[bundle_id] = roll
    return Corpus(root=root, truth=truth, roster_csv=roster_csv, rolls=rolls,
                  sheet_manifests=manifests, sheet_rolls=sheet_rolls,
                  corrupted=corrupted, answers=all_answers)


def calibrated_event_log() -> list[EventRecord]:
    """Event log whose report hits CAL_EXPECT exactly.

    Twelve sheets, six per split; per-question durations are the type
    base for the sheet's split plus a zero-sum jitter per sheet, so each
    trimmed cell mean equals the base and each sheet total equals the
    base total.
    """
    halves = {f"s{i:02d}": ("hna" if i <= 6 else "h") for i in range(1, 13)}
    events: list[EventRecord] = []
    event_id = 0
    t = 1_000_000
    for i in range(1, 13):
        bundle = f"s{i:02d}"
        split = halves[bundle]
        jitter = CAL_JITTER_MS[(i - 1) % 6]
        for qid, qtype in CAL_QUESTION_TYPES.items():
            duration = CAL_DURATIONS_MS[qtype][split] + jitter
            event_id += 1
            events.append(EventRecord(
                event_id=event_id,
                grader_id="g1" if qid in ("q1", "q2", "q3", "q4", "q5") else "g2",
                bundle_id=bundle,
                question_id=qid,
                question_type=qtype,
                split=split,
                score=float((i + event_id) % 10),
                max_score=10.0,
                served_at_ms=t,
                submitted_at_ms=t + duration,
                duration_ms=duration,
                superseded=False,
            ))
            t += duration + 500
    return events


def write_calibrated_log(path: Path | str) -> None:
    write_events_csv(path, calibrated_event_log())
