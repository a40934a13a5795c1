"""Text-recognition backends.

A backend is anything that turns a page image into word boxes. Two
implementations ship: a deterministic mock that reads a sidecar JSON file
stored next to the image (used by every test), and a remote HTTP client
for a production recognizer.
"""

from __future__ import annotations

import io
import json
import logging
import threading
import time
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np
from PIL import Image

from .errors import BackendError
from .ingest import PageImage
from .layout import WordBox

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".words.json"

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_RETRIES = 2
DEFAULT_MAX_INFLIGHT = 4


class RecognitionBackend(Protocol):
    def recognize(self, page: PageImage) -> list[WordBox]: ...


def sidecar_path(image_path: Path | str) -> Path:
    image_path = Path(image_path)
    return image_path.with_name(image_path.name + SIDECAR_SUFFIX)


def words_to_json(words: list[WordBox]) -> dict:
    return {
        "words": [
            {"text": w.text, "x0": w.x0, "y0": w.y0, "x1": w.x1, "y1": w.y1,
             "confidence": w.confidence}
            for w in words
        ]
    }


def words_from_json(payload: dict, page_index: int = 0) -> list[WordBox]:
    try:
        entries = payload["words"]
        return [
            WordBox(text=e["text"], x0=int(e["x0"]), y0=int(e["y0"]),
                    x1=int(e["x1"]), y1=int(e["y1"]),
                    confidence=float(e["confidence"]), page_index=page_index)
            for e in entries
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise BackendError(f"malformed word payload: {exc}",
                           diagnostics=json.dumps(payload)[:500],
                           retriable=False) from exc


def write_sidecar(image_path: Path | str, words: list[WordBox]) -> Path:
    path = sidecar_path(image_path)
    path.write_text(json.dumps(words_to_json(words), indent=2) + "\n")
    return path


class MockSidecarBackend:
    """Deterministic recognizer: reads `<image>.words.json` next to the image.

    An image with no sidecar recognizes as blank. Images must carry their
    source path; the path is the mock's lookup key.
    """

    def recognize(self, page: PageImage) -> list[WordBox]:
        if page.source_path is None:
            raise BackendError("mock backend needs an image with a source path",
                               retriable=False)
        path = sidecar_path(page.source_path)
        if not path.exists():
            logger.debug("no sidecar for %s; recognizing as blank", page.source_path)
            return []
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise BackendError(f"sidecar {path} is not valid JSON",
                               diagnostics=str(exc), retriable=False) from exc
        return words_from_json(payload, page_index=page.page_index)


class RemoteBackend:
    """HTTP client for a remote recognizer.

    POSTs PNG bytes to `<url>/recognize` and expects
    ``{"words": [{text, x0, y0, x1, y1, confidence}]}`` in image
    coordinates. In-flight requests are bounded and failures retried.
    """

    def __init__(self, url: str, timeout_s: float = DEFAULT_TIMEOUT_S,
                 retries: int = DEFAULT_RETRIES,
                 max_inflight: int = DEFAULT_MAX_INFLIGHT,
                 transport: httpx.BaseTransport | None = None):
        self.url = url.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def recognize(self, page: PageImage) -> list[WordBox]:
        png = _encode_png(page)
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._slots:
                    resp = self._client.post(
                        f"{self.url}/recognize", content=png,
                        headers={"content-type": "image/png"})
                if resp.status_code >= 500:
                    raise BackendError(f"recognizer returned {resp.status_code}",
                                       diagnostics=resp.text[:500])
                if resp.status_code != 200:
                    raise BackendError(f"recognizer returned {resp.status_code}",
                                       diagnostics=resp.text[:500], retriable=False)
                return words_from_json(resp.json(), page_index=page.page_index)
            except (httpx.TransportError, BackendError) as exc:
                if isinstance(exc, BackendError) and not exc.retriable:
                    raise
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(0.1 * (attempt + 1))
        raise BackendError(f"recognizer unreachable after {self.retries + 1} attempts",
                           diagnostics=str(last_exc))

    def close(self) -> None:
        self._client.close()


def _encode_png(page: PageImage) -> bytes:
    mode = "RGB" if page.is_rgb else "L"
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(page.pixels), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def make_backend(spec: str, **kwargs) -> RecognitionBackend:
    """Build a backend from a CLI/env spec: ``mock`` or a base URL."""
    if spec == "mock":
        return MockSidecarBackend()
    if spec.startswith(("http://", "https://")):
        return RemoteBackend(spec, **kwargs)
    raise BackendError(f"unknown backend spec {spec!r}", retriable=False)


def derive_crop_sidecar(page_words: list[WordBox],
                        x0: int, y0: int, x1: int, y1: int) -> list[WordBox]:
    """Project full-page words into crop coordinates for one region.

    A word belongs to the crop iff the region contains its center; boxes
    are then translated and clipped to the crop bounds. This is how mock
    fixtures flow through the crop stage: the page sidecar is the ground
    truth and each crop inherits the words written inside it.
    """
    out: list[WordBox] = []
    w, h = x1 - x0, y1 - y0
    for word in page_words:
        cx, cy = word.center
        if not (x0 <= cx <= x1 and y0 <= cy <= y1):
            continue
        nx0 = max(word.x0 - x0, 0)
        ny0 = max(word.y0 - y0, 0)
        nx1 = min(word.x1 - x0, w)
        ny1 = min(word.y1 - y0, h)
        if nx0 < nx1 and ny0 < ny1:
            out.append(WordBox(word.text, nx0, ny0, nx1, ny1,
                               word.confidence, page_index=0))
    return out
