"""Command-line entry points.

One subcommand per pipeline stage plus exam administration and the HTTP
server. Store location, recognizer, and bind address come from
``GRADEPIPE_DB``, ``GRADEPIPE_OCR_URL``, and ``GRADEPIPE_ADDR`` unless
overridden by flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analytics
from .backends import make_backend
from .errors import GradePipeError
from .identity import load_roster
from .ingest import load_bundle, rasterize_pdf, RasterizerAdapter
from .layout import DEFAULT_ANCHOR_PATTERN
from .store import Store
from . import pipeline

logger = logging.getLogger(__name__)

ENV_DB = "GRADEPIPE_DB"
ENV_OCR = "GRADEPIPE_OCR_URL"
ENV_ADDR = "GRADEPIPE_ADDR"


def _store(args) -> Store:
    return Store(args.db)


def _backend(args):
    return make_backend(args.backend)


def _parse_box(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("box must be x0,y0,x1,y1")
    return tuple(parts)  # type: ignore[return-value]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradepipe",
        description="Pipeline and grading service for scanned answer sheets.")
    parser.add_argument("--db", default=os.environ.get(ENV_DB, "gradepipe.db"),
                        help=f"store path (default ${ENV_DB} or ./gradepipe.db)")
    parser.add_argument("--backend",
                        default=os.environ.get(ENV_OCR, "mock"),
                        help="text recognizer: 'mock' or a base URL "
                             f"(default ${ENV_OCR} or mock)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("create-exam", help="register a new exam")
    p.add_argument("--exam", required=True)
    p.add_argument("--name", default="")
    p.set_defaults(func=cmd_create_exam)

    p = sub.add_parser("ingest", help="register a page bundle from a manifest or PDF")
    p.add_argument("--exam", required=True)
    p.add_argument("--manifest", type=Path,
                   help="manifest.json of an already-rasterized bundle")
    p.add_argument("--pdf", type=Path, help="source PDF (needs --rasterizer)")
    p.add_argument("--rasterizer",
                   help="external command invoked as: CMD pdf dpi outdir")
    p.add_argument("--kind", choices=("question_paper", "answer_sheet"))
    p.add_argument("--bundle-id", help="bundle id when ingesting from PDF")
    p.add_argument("--dpi", type=int, default=150)
    p.add_argument("--out-dir", type=Path, help="page output dir for PDF ingest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("detect-questions",
                       help="detect question regions on the question paper")
    p.add_argument("--exam", required=True)
    p.add_argument("--pattern", default=DEFAULT_ANCHOR_PATTERN,
                   help="anchor-token regex")
    p.set_defaults(func=cmd_detect_questions)

    p = sub.add_parser("confirm-questions",
                       help="apply edits and confirm the region set")
    p.add_argument("--exam", required=True)
    p.add_argument("--edits", type=Path, help="JSON list of edit ops")
    p.set_defaults(func=cmd_confirm_questions)

    p = sub.add_parser("map-identities",
                       help="extract roll numbers and map sheets to the roster")
    p.add_argument("--exam", required=True)
    p.add_argument("--roster", type=Path, required=True, help="roll,name CSV")
    p.add_argument("--name-box", type=_parse_box, required=True,
                   metavar="X0,Y0,X1,Y1")
    p.add_argument("--roll-box", type=_parse_box, required=True,
                   metavar="X0,Y0,X1,Y1")
    p.add_argument("--threshold", type=int, default=2,
                   help="max edit distance for automatic mapping")
    p.set_defaults(func=cmd_map_identities)

    p = sub.add_parser("correct-mapping", help="manually fix one sheet's mapping")
    p.add_argument("--exam", required=True)
    p.add_argument("--bundle", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--roll")
    group.add_argument("--unmap", action="store_true")
    p.set_defaults(func=cmd_correct_mapping)

    p = sub.add_parser("split",
                       help="assign the two evaluation halves from a seed")
    p.add_argument("--exam", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("set-keywords", help="load keyword/rubric JSON")
    p.add_argument("--exam", required=True)
    p.add_argument("--keywords", type=Path, required=True,
                   help="JSON list of {question_id, keywords, max_score, rubric}")
    p.set_defaults(func=cmd_set_keywords)

    p = sub.add_parser("crop", help="write answer-region crops and word sidecars")
    p.add_argument("--exam", required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("highlight",
                       help="match keywords and classify the attempt half")
    p.add_argument("--exam", required=True)
    p.set_defaults(func=cmd_highlight)

    p = sub.add_parser("user-add", help="create a service user")
    p.add_argument("--user-id", required=True)
    p.add_argument("--name", default="")
    p.add_argument("--role", choices=("instructor", "grader"), required=True)
    p.add_argument("--token", required=True)
    p.set_defaults(func=cmd_user_add)

    p = sub.add_parser("assign-grader", help="assign questions to a grader")
    p.add_argument("--exam", required=True)
    p.add_argument("--grader", required=True)
    p.add_argument("--questions", required=True,
                   help="comma-separated question ids")
    p.set_defaults(func=cmd_assign_grader)

    p = sub.add_parser("open-grading", help="open the exam for grading")
    p.add_argument("--exam", required=True)
    p.set_defaults(func=cmd_open_grading)

    p = sub.add_parser("serve", help="run the grading HTTP service")
    p.add_argument("--addr",
                   default=os.environ.get(ENV_ADDR, "127.0.0.1:8000"),
                   help=f"host:port (default ${ENV_ADDR} or 127.0.0.1:8000)")
    p.add_argument("--frontend", type=Path,
                   help="static frontend directory mounted at /app")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-events", help="write the event log CSV")
    p.add_argument("--exam", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export_events)

    p = sub.add_parser("analyze",
                       help="grading-time report from an event log or the store")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--events", type=Path, help="event log CSV")
    src.add_argument("--exam", help="read events from the store")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--sheet-trim", choices=("sheet", "response"),
                   default="sheet",
                   help="whether per-sheet stats trim sheet totals or "
                        "per-response durations")
    p.set_defaults(func=cmd_analyze)

    return parser


def cmd_create_exam(args) -> int:
    _store(args).create_exam(args.exam, args.name or args.exam)
    print(f"created exam {args.exam}")
    return 0


def cmd_ingest(args) -> int:
    from .ingest import PageBundle
    store = _store(args)
    if args.manifest:
        bundle = load_bundle(args.manifest)
    elif args.pdf:
        if not args.rasterizer:
            raise GradePipeError("--rasterizer is required with --pdf")
        adapter = RasterizerAdapter(args.rasterizer.split())
        bundle = rasterize_pdf(args.pdf, dpi=args.dpi, adapter=adapter,
                               out_dir=args.out_dir)
        if args.bundle_id or args.kind:
            bundle = PageBundle(bundle_id=args.bundle_id or bundle.bundle_id,
                                kind=args.kind or bundle.kind,
                                pages=bundle.pages,
                                source_name=bundle.source_name)
    else:
        raise GradePipeError("ingest needs --manifest or --pdf")
    store.add_bundle(args.exam, bundle)
    print(f"ingested bundle {bundle.bundle_id} "
          f"({bundle.kind}, {len(bundle.pages)} pages)")
    return 0


def cmd_detect_questions(args) -> int:
    regions = pipeline.run_detection(_store(args), args.exam, _backend(args),
                                     pattern=args.pattern)
    for r in regions:
        print(f"{r.order:3d} {r.question_id:8s} page {r.page_index} "
              f"({r.x0},{r.y0})-({r.x1},{r.y1})")
    return 0


def cmd_confirm_questions(args) -> int:
    from .layout import confirm_regions
    store = _store(args)
    edits = json.loads(args.edits.read_text()) if args.edits else []
    regions, version = store.get_questions(args.exam)
    papers = store.list_bundles(args.exam, kind="question_paper")
    dims = store.page_dims(papers[0]["bundle_id"]) if papers else None
    confirmed = confirm_regions(regions, edits, dims)
    store.save_questions(args.exam, confirmed, version)
    print(f"confirmed {len(confirmed)} question regions")
    return 0


def cmd_map_identities(args) -> int:
    store = _store(args)
    store.set_roster(args.exam, load_roster(args.roster))
    mappings = pipeline.run_identity(store, args.exam, _backend(args),
                                     args.name_box, args.roll_box,
                                     threshold=args.threshold)
    for m in mappings:
        print(f"{m.bundle_id:20s} {m.status:8s} roll={m.matched_roll or '-':12s} "
              f"d={m.edit_distance} candidate={m.roll_candidate!r}")
    return 0


def cmd_correct_mapping(args) -> int:
    store = _store(args)
    roll = None if args.unmap else args.roll
    updated = store.update_mapping(args.exam, args.bundle, roll)
    print(f"{updated.bundle_id}: {updated.status} roll={updated.matched_roll}")
    return 0


def cmd_split(args) -> int:
    hna, ha = _store(args).assign_split(args.exam, args.seed)
    print(f"no-attempt half ({len(hna)}): {' '.join(hna)}")
    print(f"attempt half    ({len(ha)}): {' '.join(ha)}")
    return 0


def cmd_set_keywords(args) -> int:
    specs = json.loads(args.keywords.read_text())
    _store(args).set_keywords(args.exam, specs)
    print(f"stored keywords for {len(specs)} questions")
    return 0


def cmd_crop(args) -> int:
    results = pipeline.run_crops(_store(args), args.exam, _backend(args),
                                 out_dir=args.out_dir)
    print(f"wrote {len(results)} crops under {args.out_dir}")
    return 0


def cmd_highlight(args) -> int:
    classes = pipeline.run_highlights(_store(args), args.exam, _backend(args))
    for bundle_id in sorted(classes):
        print(f"{bundle_id}: {classes[bundle_id]}")
    return 0


def cmd_user_add(args) -> int:
    _store(args).add_user(args.user_id, args.name or args.user_id,
                          args.role, args.token)
    print(f"added {args.role} {args.user_id}")
    return 0


def cmd_assign_grader(args) -> int:
    store = _store(args)
    questions = [q.strip() for q in args.questions.split(",") if q.strip()]
    store.assign_grader(args.exam, args.grader, questions)
    print(f"assigned {args.grader}: {', '.join(questions)}")
    return 0


def cmd_open_grading(args) -> int:
    _store(args).open_grading(args.exam)
    print(f"exam {args.exam} is open for grading")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    host, _, port = args.addr.rpartition(":")
    app = create_app(_store(args), frontend_dir=args.frontend)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def cmd_export_events(args) -> int:
    events = _store(args).list_events(args.exam)
    analytics.write_events_csv(args.out, events)
    print(f"wrote {len(events)} events to {args.out}")
    return 0


def cmd_analyze(args) -> int:
    if args.events:
        events = analytics.read_events_csv(args.events)
    else:
        events = _store(args).list_events(args.exam)
    report = analytics.build_report(events, sheet_trim_level=args.sheet_trim)
    json_path, csv_path = analytics.emit_report(report, args.out_dir)
    summary = report.summary
    print(f"wrote {json_path} and {csv_path}")
    if summary.avg_reduction_per_response_pct is not None:
        print(f"avg reduction per response: "
              f"{summary.avg_reduction_per_response_pct:.2f}%")
    if summary.avg_reduction_per_sheet_pct is not None:
        print(f"avg reduction per sheet:    "
              f"{summary.avg_reduction_per_sheet_pct:.2f}%")
    for qtype, pct in sorted(summary.per_type_reduction_pct.items()):
        shown = "n/a" if pct is None else f"{pct:.2f}%"
        print(f"  {qtype:10s} {shown}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GradePipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
