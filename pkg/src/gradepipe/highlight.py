"""Keyword matching and overlay rendering on answer crops.

Matching is word-level exact match after normalization: case folded,
sentence punctuation stripped from the ends, everything else preserved.
No stemming, no synonyms. Multi-word keywords match consecutive words in
reading order with nothing in between.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ValidationError
from .ingest import PageImage
from .layout import WordBox, reading_order

# Sentence punctuation stripped from token ends. Brackets and slashes are
# structural ("o(n)", "a/b") and stay put even at the edges.
EDGE_PUNCTUATION = ".,;:!?'\"‘’“”"

S_H = "S_H"
S_NH = "S_NH"


@dataclass(frozen=True)
class KeywordSpec:
    """Instructor keywords for one question, stored normalized."""

    question_id: str
    keywords: tuple[str, ...] = ()

    @staticmethod
    def build(question_id: str, raw_keywords: list[str]) -> KeywordSpec:
        normalized = []
        for kw in raw_keywords:
            norm = normalize_phrase(kw)
            if not norm:
                raise ValidationError(f"keyword {kw!r} normalizes to nothing")
            normalized.append(norm)
        return KeywordSpec(question_id, tuple(normalized))


@dataclass
class HighlightSet:
    """Matched keyword word-boxes for one answer crop."""

    question_id: str
    bundle_id: str
    matches: list[tuple[WordBox, str]] = field(default_factory=list)
    attempted: bool = True

    def __post_init__(self):
        if not self.attempted and self.matches:
            raise ValidationError("an unattempted highlight set cannot hold matches")


@dataclass(frozen=True)
class OverlayStyle:
    fill_rgb: tuple[int, int, int] = (255, 230, 0)
    fill_alpha: float = 0.35
    border_rgb: tuple[int, int, int] = (220, 0, 0)
    border_px: int = 2


def normalize(token: str) -> str:
    """Case-fold and strip leading/trailing sentence punctuation."""
    return token.casefold().strip(EDGE_PUNCTUATION)


def normalize_phrase(phrase: str) -> str:
    """Normalize each whitespace-separated token; drop empty ones."""
    return " ".join(t for t in (normalize(p) for p in phrase.split()) if t)


def match_keywords(words: list[WordBox], spec: KeywordSpec) -> HighlightSet:
    """All words whose normalized text exactly equals a keyword.

    Multiple words may match one keyword and vice versa. A multi-word
    keyword matches a run of consecutive words in reading order; every
    word of the run is recorded against the full keyword.
    """
    ordered = reading_order(words)
    norms = [normalize(w.text) for w in ordered]
    matches: list[tuple[WordBox, str]] = []
    for keyword in spec.keywords:
        parts = keyword.split(" ")
        n = len(parts)
        for i in range(len(ordered) - n + 1):
            if norms[i:i + n] == parts:
                matches.extend((ordered[i + j], keyword) for j in range(n))
    matches.sort(key=lambda m: (m[0].y0, m[0].x0, m[1]))
    return HighlightSet(question_id=spec.question_id, bundle_id="", matches=matches)


def render_highlights(crop: PageImage, hs: HighlightSet,
                      style: OverlayStyle = OverlayStyle()) -> PageImage:
    """Overlay the matches on a crop.

    The fill is composited in a single pass over the union of the match
    boxes, so overlapping boxes never double-darken; a solid border is
    drawn just inside each box. Pixels outside every match box are
    untouched and the dimensions never change.
    """
    out = crop.to_rgb()
    pixels = out.pixels.copy()
    h, w = pixels.shape[:2]

    boxes = []
    for word, _kw in hs.matches:
        if word.x0 < 0 or word.y0 < 0 or word.x1 > w or word.y1 > h:
            raise ValidationError(
                f"match box ({word.x0},{word.y0},{word.x1},{word.y1}) outside "
                f"crop bounds {w}x{h}"
            )
        boxes.append((word.x0, word.y0, word.x1, word.y1))

    if boxes:
        mask = np.zeros((h, w), dtype=bool)
        for x0, y0, x1, y1 in boxes:
            mask[y0:y1, x0:x1] = True
        fill = np.array(style.fill_rgb, dtype=np.float64)
        blended = (1.0 - style.fill_alpha) * pixels[mask].astype(np.float64) \
            + style.fill_alpha * fill
        pixels[mask] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)

        b = style.border_px
        border = np.array(style.border_rgb, dtype=np.uint8)
        for x0, y0, x1, y1 in boxes:
            inner = np.zeros((h, w), dtype=bool)
            inner[y0:y1, x0:x1] = True
            ix0, iy0 = min(x0 + b, x1), min(y0 + b, y1)
            ix1, iy1 = max(x1 - b, x0), max(y1 - b, y0)
            inner[iy0:iy1, ix0:ix1] = False
            pixels[inner] = border

    return PageImage(width=crop.width, height=crop.height, pixels=pixels,
                     page_index=crop.page_index, source_path=crop.source_path)


def classify_sheet(highlight_sets: list[HighlightSet]) -> str:
    """S_H when any keyword matched anywhere on the sheet, else S_NH.

    Every set must reflect an actual highlight attempt; an unattempted
    set means the sheet sits in the no-attempt half and must not be
    classified.
    """
    if not highlight_sets:
        raise PreconditionError("no highlight sets for sheet")
    for hs in highlight_sets:
        if not hs.attempted:
            raise PreconditionError(
                f"highlight not attempted for question {hs.question_id}; "
                "sheet is not classifiable"
            )
    return S_H if any(hs.matches for hs in highlight_sets) else S_NH
