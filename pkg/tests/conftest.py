"""Shared fixtures and tiny factories for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from gradepipe.ingest import PageImage
from gradepipe.layout import WordBox
from gradepipe.store import Store

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


def wb(text: str, x0: int, y0: int, x1: int, y1: int,
       confidence: float = 0.9, page_index: int = 0) -> WordBox:
    return WordBox(text=text, x0=x0, y0=y0, x1=x1, y1=y1,
                   confidence=confidence, page_index=page_index)


def gray_page(width: int = 200, height: int = 300, value: int = 255,
              page_index: int = 0, source_path=None) -> PageImage:
    pixels = np.full((height, width), value, dtype=np.uint8)
    return PageImage(width=width, height=height, pixels=pixels,
                     page_index=page_index, source_path=source_path)


@pytest.fixture
def store(tmp_path) -> Store:
    return Store(tmp_path / "test.db")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" in rep.nodeid and rep.when == "call":
                name = rep.nodeid.split("::")[-1]
                lines.append(f"[ACCEPTANCE] {name}: {outcome.upper()[:4]}")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
