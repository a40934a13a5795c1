#!/usr/bin/env python3
"""Generate a synthetic exam corpus (paper, roster, answer sheets)."""

import argparse
from pathlib import Path

from gradepipe.synth import make_corpus


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--sheets", type=int, default=12)
    parser.add_argument("--questions", type=int, default=10)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    corpus = make_corpus(args.out, n_sheets=args.sheets,
                         n_questions=args.questions, seed=args.seed)
    print(f"paper manifest:  {corpus.truth.manifest}")
    print(f"roster:          {corpus.roster_csv}")
    print(f"sheets:          {len(corpus.sheet_manifests)} "
          f"(corrupted rolls: {', '.join(corpus.corrupted) or 'none'})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
