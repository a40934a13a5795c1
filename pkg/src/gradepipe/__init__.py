"""Human-in-the-loop pipeline for grading scanned answer sheets.

Stages: ingest page bundles, detect question regions on the blank
question paper, map sheets to the roster by recognized roll numbers,
deduce and crop answer regions, highlight instructor keywords, serve a
timed grading queue over HTTP, and report grading-time statistics.
"""

__version__ = "0.1.0"
