"""Orchestration of the pipeline stages against a store.

Each function runs one stage end to end: recognize and detect question
regions, extract and map identities, crop answer regions, match and
persist highlights. The CLI and the end-to-end tests drive these; the
HTTP service only reads their results.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .backends import derive_crop_sidecar, write_sidecar
from .errors import PreconditionError, ValidationError
from .highlight import S_H, HighlightSet, KeywordSpec, classify_sheet, match_keywords
from .identity import extract_identity, map_to_roster
from .ingest import PageImage
from .layout import DEFAULT_ANCHOR_PATTERN, QuestionRegion, recognize_page
from .regions import AnswerRegion, crop, deduce_answer_regions
from .store import Store

logger = logging.getLogger(__name__)

Box = tuple[int, int, int, int]


def _single_question_paper(store: Store, exam_id: str) -> str:
    papers = store.list_bundles(exam_id, kind="question_paper")
    if len(papers) != 1:
        raise ValidationError(
            f"exam {exam_id!r} needs exactly one question paper bundle, "
            f"found {len(papers)}")
    return papers[0]["bundle_id"]


def run_detection(store: Store, exam_id: str, backend,
                  pattern: str = DEFAULT_ANCHOR_PATTERN) -> list[QuestionRegion]:
    """Recognize the question paper and store the detected regions."""
    bundle = store.load_bundle_pages(_single_question_paper(store, exam_id))
    words = []
    for page in bundle.pages:
        words.extend(recognize_page(page, backend))
    dims = {p.page_index: (p.width, p.height) for p in bundle.pages}
    from .layout import detect_question_regions
    regions = detect_question_regions(words, dims, pattern)
    _, version = store.get_questions(exam_id)
    store.save_questions(exam_id, regions, version)
    logger.info("exam %s: detected %d question regions", exam_id, len(regions))
    return regions


def run_identity(store: Store, exam_id: str, backend, name_box: Box,
                 roll_box: Box, threshold: int = 2):
    """Extract roll candidates from every sheet and map them to the roster."""
    roster = store.get_roster(exam_id)
    if not roster:
        raise PreconditionError(f"exam {exam_id!r} has no roster loaded")
    candidates = []
    for rec in store.list_bundles(exam_id, kind="answer_sheet"):
        sheet = store.load_bundle_pages(rec["bundle_id"])
        name_cand, roll_cand = extract_identity(sheet, name_box, roll_box, backend)
        candidates.append((rec["bundle_id"], roll_cand, name_cand))
    mappings = map_to_roster(candidates, roster, threshold)
    store.save_mappings(exam_id, mappings)
    auto = sum(1 for m in mappings if m.status == "auto")
    logger.info("exam %s: %d/%d sheets mapped automatically",
                exam_id, auto, len(mappings))
    return mappings


def answer_regions_for_bundle(store: Store, exam_id: str,
                              bundle_id: str) -> list[AnswerRegion]:
    exam = store.get_exam(exam_id)
    regions, _ = store.get_questions(exam_id)
    dims = store.page_dims(bundle_id)
    return deduce_answer_regions(regions, dims, bundle_id=bundle_id,
                                 margin=exam["margin_px"],
                                 vertical_offset=exam["vertical_offset"])


def crop_words(page_words: dict[int, list], region: AnswerRegion) -> list:
    """Word boxes inside a region, translated to crop coordinates."""
    words = page_words.get(region.page_index, [])
    return derive_crop_sidecar(words, region.x0, region.y0, region.x1, region.y1)


def run_crops(store: Store, exam_id: str, backend,
              out_dir: Path | str | None = None) -> dict[tuple[str, str], list]:
    """Crop every (sheet, question) answer region.

    Returns crop-local word boxes per (bundle_id, question_id). With
    ``out_dir`` set, writes ``<out>/<bundle>/<question>.png`` plus a word
    sidecar per crop; degenerate regions are skipped (the whole page
    stands in for them at serve time).
    """
    out_path = Path(out_dir) if out_dir is not None else None
    results: dict[tuple[str, str], list] = {}
    for rec in store.list_bundles(exam_id, kind="answer_sheet"):
        bundle = store.load_bundle_pages(rec["bundle_id"])
        regions = answer_regions_for_bundle(store, exam_id, rec["bundle_id"])
        page_words = {p.page_index: recognize_page(p, backend)
                      for p in bundle.pages}
        for region in regions:
            key = (rec["bundle_id"], region.question_id)
            if region.degenerate:
                logger.warning("%s/%s: degenerate answer region, skipping crop",
                               *key)
                results[key] = []
                continue
            words = crop_words(page_words, region)
            results[key] = words
            if out_path is not None:
                page = bundle.page(region.page_index)
                crop_img = crop(page, region)
                crop_dir = out_path / rec["bundle_id"]
                crop_dir.mkdir(parents=True, exist_ok=True)
                png = crop_dir / f"{region.question_id}.png"
                _save_png(crop_img, png)
                write_sidecar(png, words)
    return results


def _save_png(image: PageImage, path: Path) -> None:
    from PIL import Image
    Image.fromarray(image.pixels).save(path, format="PNG")


def run_highlights(store: Store, exam_id: str, backend) -> dict[str, str]:
    """Match keywords on the attempt half and classify each of its sheets.

    Sheets in the no-attempt half get no highlight sets at all; sheets in
    the attempt half get one set per question (possibly empty) and a
    classification: delivered ("h") when any keyword matched anywhere on
    the sheet, else not-delivered ("nh").
    """
    halves = store.split_halves(exam_id)
    if not halves:
        raise PreconditionError(f"exam {exam_id!r}: split not assigned")
    specs = {k["question_id"]: KeywordSpec.build(k["question_id"], k["keywords"])
             for k in store.get_keywords(exam_id)}
    regions, _ = store.get_questions(exam_id)
    words_by_key = run_crops(store, exam_id, backend)

    classes: dict[str, str] = {}
    for rec in store.list_bundles(exam_id, kind="answer_sheet"):
        bundle_id = rec["bundle_id"]
        if halves.get(bundle_id) != "ha":
            continue
        sets = []
        for region in regions:
            spec = specs.get(region.question_id,
                             KeywordSpec(region.question_id, ()))
            hs = match_keywords(words_by_key.get((bundle_id, region.question_id), []),
                                spec)
            hs.bundle_id = bundle_id
            store.save_highlight(exam_id, hs)
            sets.append(hs)
        cls = "h" if classify_sheet(sets) == S_H else "nh"
        store.set_classification(exam_id, bundle_id, cls)
        classes[bundle_id] = cls
    logger.info("exam %s: classified %d sheets (%d with highlights)",
                exam_id, len(classes),
                sum(1 for c in classes.values() if c == "h"))
    return classes
