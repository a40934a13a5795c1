"""Answer-region deduction and cropping.

A question's answer region is the strip between the bottom of its
bounding box and the top of the next question's box; the last question
on a page runs to the page bottom minus a margin. Regions are deduced at
question-paper coordinates (scans are assumed to align with the printed
template) plus an optional per-exam vertical offset.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NotFoundError, PreconditionError, ValidationError
from .ingest import PageBundle, PageImage
from .layout import QuestionRegion

DEFAULT_MARGIN_PX = 16


@dataclass(frozen=True)
class AnswerRegion:
    question_id: str
    bundle_id: str
    page_index: int
    x0: int
    y0: int
    x1: int
    y1: int
    degenerate: bool

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def deduce_answer_regions(
    questions: list[QuestionRegion],
    page_dims: dict[int, tuple[int, int]],
    bundle_id: str = "",
    margin: int = DEFAULT_MARGIN_PX,
    vertical_offset: int = 0,
) -> list[AnswerRegion]:
    """Deduce one answer region per confirmed question.

    ``page_dims`` are the answer-sheet page sizes (which may differ from
    the question paper's). Zero or negative-height gaps are flagged
    degenerate rather than dropped, so every question keeps a row.
    """
    if any(not q.confirmed for q in questions):
        raise PreconditionError("answer regions require a confirmed question set")
    ordered = sorted(questions, key=lambda q: q.order)

    regions: list[AnswerRegion] = []
    for i, q in enumerate(ordered):
        if q.page_index not in page_dims:
            raise ValidationError(f"question {q.question_id}: no page {q.page_index}")
        width, height = page_dims[q.page_index]
        nxt = ordered[i + 1] if i + 1 < len(ordered) else None
        top = q.y1 + vertical_offset
        if nxt is not None and nxt.page_index == q.page_index:
            bottom = nxt.y0 + vertical_offset
        else:
            bottom = height - margin
        x0, x1 = margin, width - margin
        top = max(top, 0)
        bottom = min(bottom, height)
        degenerate = bottom <= top or x1 <= x0
        regions.append(AnswerRegion(
            question_id=q.question_id,
            bundle_id=bundle_id,
            page_index=q.page_index,
            x0=x0, y0=top, x1=x1, y1=max(bottom, top),
            degenerate=degenerate,
        ))
    return regions


def crop(page: PageImage, region: AnswerRegion) -> PageImage:
    """Copy the region's pixels out of the page verbatim."""
    if region.degenerate:
        raise ValidationError(
            f"answer region for {region.question_id} is degenerate; "
            "use the whole-page view instead"
        )
    if region.page_index != page.page_index:
        raise ValidationError(
            f"region is for page {region.page_index}, got page {page.page_index}")
    if not (0 <= region.x0 < region.x1 <= page.width
            and 0 <= region.y0 < region.y1 <= page.height):
        raise ValidationError(
            f"region ({region.x0},{region.y0},{region.x1},{region.y1}) outside "
            f"page bounds {page.width}x{page.height}"
        )
    pixels = page.pixels[region.y0:region.y1, region.x0:region.x1].copy()
    return PageImage(width=region.width, height=region.height,
                     pixels=pixels, page_index=page.page_index,
                     source_path=page.source_path)


def whole_page(bundle: PageBundle, page_index: int) -> PageImage:
    """The uncropped page, for the grader's fallback view."""
    if not 0 <= page_index < len(bundle.pages):
        raise NotFoundError(f"bundle {bundle.bundle_id}: no page {page_index}")
    return bundle.page(page_index)
