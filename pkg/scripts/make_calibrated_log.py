#!/usr/bin/env python3
"""Write the calibrated grading event log with known report statistics."""

import argparse
from pathlib import Path

from gradepipe.synth import CAL_EXPECT, write_calibrated_log


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()
    write_calibrated_log(args.out)
    print(f"wrote {args.out}")
    print(f"expected report figures: {CAL_EXPECT}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
