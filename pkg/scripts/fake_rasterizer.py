#!/usr/bin/env python3
"""Reference rasterizer adapter for development and tests.

Real deployments plug in a PDF renderer here. This stand-in takes a JSON
page description instead of a PDF and obeys the adapter contract:

    fake_rasterizer.py <input> <dpi> <out_dir>

It writes page-<index>.png files, a word sidecar per page, and
manifest.json into <out_dir>, exiting non-zero on malformed input.

Input format:
    {"bundle_id": "b1", "kind": "answer_sheet",
     "pages": [{"width": 1000, "height": 1400,
                "words": [{"text": "hi", "x0": 10, "y0": 10,
                           "x1": 60, "y1": 32, "confidence": 0.9}]}]}
"""

import json
import sys
from pathlib import Path

from gradepipe.backends import words_from_json
from gradepipe.ingest import write_manifest
from gradepipe.synth import write_page


def main(argv: list[str]) -> int:
    if len(argv) != 4:
        print("usage: fake_rasterizer.py <input> <dpi> <out_dir>", file=sys.stderr)
        return 2
    src, _dpi, out_dir = Path(argv[1]), int(argv[2]), Path(argv[3])
    try:
        doc = json.loads(src.read_text())
        bundle_id = doc["bundle_id"]
        kind = doc["kind"]
        pages = doc["pages"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"bad input {src}: {exc}", file=sys.stderr)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    page_files = []
    for index, page in enumerate(pages):
        words = words_from_json({"words": page.get("words", [])})
        path = out_dir / f"page-{index}.png"
        write_page(path, words, width=page["width"], height=page["height"])
        page_files.append(path)
    write_manifest(out_dir / "manifest.json", bundle_id, kind, page_files,
                   source_name=src.name)
    print(f"rasterized {len(page_files)} pages to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
