"""Sheet-to-student identity mapping.

Name and roll-number text is read from fixed boxes on page 0 of every
answer sheet (the boxes are marked once on a reference sheet), then each
sheet is matched to the roster roll with minimum edit distance. Doubt is
routed to the instructor: ambiguous or distant candidates stay unmapped.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConflictError, ValidationError
from .ingest import PageBundle
from .layout import WordBox, reading_order

logger = logging.getLogger(__name__)

DEFAULT_EDIT_THRESHOLD = 2

STATUS_AUTO = "auto"
STATUS_MANUAL = "manual"
STATUS_UNMAPPED = "unmapped"


@dataclass(frozen=True)
class RosterEntry:
    roll: str
    name: str

    def __post_init__(self):
        if not self.roll or not self.name:
            raise ValidationError(f"roster entry needs both roll and name: {self!r}")


@dataclass
class IdentityMapping:
    """Match state for one answer sheet."""

    bundle_id: str
    roll_candidate: str
    name_candidate: str
    matched_roll: str | None
    edit_distance: int
    status: str

    def to_dict(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "roll_candidate": self.roll_candidate,
            "name_candidate": self.name_candidate,
            "matched_roll": self.matched_roll,
            "edit_distance": self.edit_distance,
            "status": self.status,
        }


def load_roster(path: Path | str) -> list[RosterEntry]:
    """Read a `roll,name` CSV; duplicate rolls are rejected."""
    entries: list[RosterEntry] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"roll", "name"} <= set(reader.fieldnames):
            raise ValidationError(f"roster {path} must have a roll,name header")
        for row in reader:
            entry = RosterEntry(roll=row["roll"].strip(), name=row["name"].strip())
            if entry.roll in seen:
                raise ValidationError(f"roster {path}: duplicate roll {entry.roll!r}")
            seen.add(entry.roll)
            entries.append(entry)
    return entries


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1,
                           cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _box_text(words: list[WordBox], box: tuple[int, int, int, int]) -> str:
    x0, y0, x1, y1 = box
    inside = [w for w in words
              if x0 <= w.center[0] <= x1 and y0 <= w.center[1] <= y1]
    return " ".join(w.text for w in reading_order(inside)).strip()


def extract_identity(
    sheet: PageBundle,
    name_box: tuple[int, int, int, int],
    roll_box: tuple[int, int, int, int],
    backend,
) -> tuple[str, str]:
    """Recognize the name and roll text inside the fixed page-0 boxes.

    A word counts as inside a box iff the box contains the word's center.
    Returns whitespace-trimmed strings, empty when nothing was recognized.
    """
    page = sheet.page(0)
    for label, box in (("name", name_box), ("roll", roll_box)):
        x0, y0, x1, y1 = box
        if not (0 <= x0 < x1 <= page.width and 0 <= y0 < y1 <= page.height):
            raise ValidationError(
                f"{label} box {box} outside page bounds "
                f"{page.width}x{page.height} (bundle {sheet.bundle_id})"
            )
    words = backend.recognize(page)
    return _box_text(words, name_box), _box_text(words, roll_box)


def map_to_roster(
    candidates: list[tuple[str, str, str]],
    roster: list[RosterEntry],
    threshold: int = DEFAULT_EDIT_THRESHOLD,
) -> list[IdentityMapping]:
    """Match (bundle_id, roll_candidate, name_candidate) rows to the roster.

    Each sheet is matched to the roster roll at minimum edit distance,
    automatically only when that minimum is unique and within the
    threshold. The mapped subset is a bijection: sheets are assigned
    greedily in increasing distance order (ties broken by roster order,
    then candidate order) and a sheet whose best roll is already taken
    stays unmapped for the instructor to resolve.
    """
    if not roster:
        raise ValidationError("roster is empty")
    roster_pos = {e.roll: i for i, e in enumerate(roster)}

    scored: list[tuple[int, int, int, str, str | None, str, str]] = []
    for ci, (bundle_id, roll_cand, name_cand) in enumerate(candidates):
        distances = [(edit_distance(roll_cand, e.roll), i)
                     for i, e in enumerate(roster)]
        d_min = min(d for d, _ in distances)
        argmin = [i for d, i in distances if d == d_min]
        best: str | None = None
        if roll_cand and d_min <= threshold and len(argmin) == 1:
            best = roster[argmin[0]].roll
        scored.append((d_min, roster_pos.get(best, len(roster)), ci,
                       bundle_id, best, roll_cand, name_cand))

    taken: set[str] = set()
    by_bundle: dict[str, IdentityMapping] = {}
    for d_min, _rpos, _ci, bundle_id, best, roll_cand, name_cand in sorted(
            scored, key=lambda t: (t[0], t[1], t[2])):
        if best is not None and best not in taken:
            taken.add(best)
            by_bundle[bundle_id] = IdentityMapping(
                bundle_id, roll_cand, name_cand, best, d_min, STATUS_AUTO)
        else:
            by_bundle[bundle_id] = IdentityMapping(
                bundle_id, roll_cand, name_cand, None, d_min, STATUS_UNMAPPED)

    return [by_bundle[bundle_id] for bundle_id, _, _ in candidates]


def correct_mapping(
    mappings: list[IdentityMapping],
    bundle_id: str,
    roll: str | None,
    roster: list[RosterEntry],
) -> list[IdentityMapping]:
    """Manually reassign one sheet; returns the updated mapping list.

    Setting roll=None releases the sheet to unmapped. Assigning a roll
    already held by a different sheet is a conflict, never a silent
    steal.
    """
    by_bundle = {m.bundle_id: m for m in mappings}
    if bundle_id not in by_bundle:
        raise ValidationError(f"unknown bundle {bundle_id!r}")
    if roll is not None:
        if roll not in {e.roll for e in roster}:
            raise ValidationError(f"roll {roll!r} is not in the roster")
        holder = next((m for m in mappings
                       if m.matched_roll == roll and m.bundle_id != bundle_id), None)
        if holder is not None:
            raise ConflictError(
                f"roll {roll!r} is already mapped to sheet {holder.bundle_id!r}")

    updated = []
    for m in mappings:
        if m.bundle_id != bundle_id:
            updated.append(m)
        elif roll is None:
            updated.append(replace(m, matched_roll=None, status=STATUS_UNMAPPED))
        else:
            updated.append(replace(m, matched_roll=roll,
                                   edit_distance=edit_distance(m.roll_candidate, roll),
                                   status=STATUS_MANUAL))
    return updated
