"""Page-image bundles: the canonical input form.

A bundle is an ordered list of page images described by a JSON manifest.
PDF input is supported only through an external rasterizer adapter; the
core never parses PDF itself.
"""

from __future__ import annotations

import json
import logging
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    AdapterError,
    ConfigurationError,
    DuplicatePageIndexError,
    EmptyBundleError,
    MissingFileError,
    UnreadableImageError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_DPI = 150

QUESTION_PAPER = "question_paper"
ANSWER_SHEET = "answer_sheet"
BUNDLE_KINDS = (QUESTION_PAPER, ANSWER_SHEET)


@dataclass
class PageImage:
    """One raster page: 8-bit grayscale (h, w) or RGB (h, w, 3) pixels."""

    width: int
    height: int
    pixels: np.ndarray
    page_index: int
    source_path: Path | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"page {self.page_index}: non-positive dimensions "
                f"{self.width}x{self.height}"
            )
        shape = self.pixels.shape
        if shape[:2] != (self.height, self.width):
            raise ValidationError(
                f"page {self.page_index}: pixel buffer shape {shape} inconsistent "
                f"with dimensions {self.width}x{self.height}"
            )
        if len(shape) not in (2, 3) or (len(shape) == 3 and shape[2] != 3):
            raise ValidationError(
                f"page {self.page_index}: unsupported channel layout {shape}"
            )
        if self.pixels.dtype != np.uint8:
            raise ValidationError(
                f"page {self.page_index}: pixels must be uint8, got {self.pixels.dtype}"
            )

    @property
    def is_rgb(self) -> bool:
        return self.pixels.ndim == 3

    def to_gray(self) -> PageImage:
        """Grayscale copy; geometry and cropping work on this form."""
        if not self.is_rgb:
            return self
        gray = np.asarray(
            Image.fromarray(self.pixels, mode="RGB").convert("L"), dtype=np.uint8
        )
        return PageImage(self.width, self.height, gray, self.page_index, self.source_path)

    def to_rgb(self) -> PageImage:
        """RGB copy; overlay rendering works on this form."""
        if self.is_rgb:
            return self
        rgb = np.repeat(self.pixels[:, :, None], 3, axis=2)
        return PageImage(self.width, self.height, rgb, self.page_index, self.source_path)


@dataclass
class PageBundle:
    """Ordered page images for one uploaded document."""

    bundle_id: str
    kind: str
    pages: list[PageImage] = field(default_factory=list)
    source_name: str = ""

    def __post_init__(self):
        if self.kind not in BUNDLE_KINDS:
            raise ValidationError(f"bundle {self.bundle_id}: unknown kind {self.kind!r}")
        if not self.pages:
            raise EmptyBundleError(f"bundle {self.bundle_id}: no pages")
        indices = [p.page_index for p in self.pages]
        if indices != list(range(len(self.pages))):
            raise ValidationError(
                f"bundle {self.bundle_id}: page indices {indices} are not 0..{len(self.pages) - 1}"
            )

    def page(self, index: int) -> PageImage:
        if not 0 <= index < len(self.pages):
            raise ValidationError(f"bundle {self.bundle_id}: no page {index}")
        return self.pages[index]

    def metadata(self) -> dict:
        """Canonical bundle metadata; deterministic for identical inputs."""
        return {
            "bundle_id": self.bundle_id,
            "kind": self.kind,
            "source_name": self.source_name,
            "pages": [
                {
                    "index": p.page_index,
                    "width": p.width,
                    "height": p.height,
                    "file": str(p.source_path) if p.source_path else None,
                }
                for p in self.pages
            ],
        }


def load_page_image(path: Path, page_index: int) -> PageImage:
    """Read one image file, keeping RGB when present, else grayscale."""
    if not path.exists():
        raise MissingFileError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "P"):
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            else:
                arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise UnreadableImageError(f"cannot decode image {path}: {exc}") from exc
    h, w = arr.shape[:2]
    return PageImage(width=w, height=h, pixels=arr, page_index=page_index, source_path=path)


def load_bundle(manifest_path: Path | str) -> PageBundle:
    """Load a bundle from a JSON manifest.

    The manifest lists `bundle_id`, `kind`, and `pages: [{index, file}]`.
    Page order follows the manifest, never the filesystem. Any invalid
    entry fails the whole load; no partial bundle is returned.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc

    for key in ("bundle_id", "kind", "pages"):
        if key not in manifest:
            raise ValidationError(f"manifest {manifest_path}: missing field {key!r}")
    entries = manifest["pages"]
    if not entries:
        raise EmptyBundleError(f"manifest {manifest_path}: empty page list")

    seen: set[int] = set()
    for entry in entries:
        idx = entry.get("index")
        if idx in seen:
            raise DuplicatePageIndexError(
                f"manifest {manifest_path}: duplicate page index {idx} "
                f"(entry {entry.get('file')!r})"
            )
        seen.add(idx)

    base = manifest_path.parent
    pages = []
    for entry in sorted(entries, key=lambda e: e["index"]):
        file_path = Path(entry["file"])
        if not file_path.is_absolute():
            file_path = base / file_path
        pages.append(load_page_image(file_path, entry["index"]))

    return PageBundle(
        bundle_id=manifest["bundle_id"],
        kind=manifest["kind"],
        pages=pages,
        source_name=manifest.get("source_name", manifest_path.name),
    )


def write_manifest(
    path: Path, bundle_id: str, kind: str, page_files: list[Path], source_name: str = ""
) -> None:
    """Write a bundle manifest next to its page images."""
    manifest = {
        "bundle_id": bundle_id,
        "kind": kind,
        "source_name": source_name or bundle_id,
        "pages": [{"index": i, "file": str(f)} for i, f in enumerate(page_files)],
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")


class RasterizerAdapter:
    """External PDF rasterizer boundary.

    The adapter is any executable invoked as
    ``<command...> <pdf_path> <dpi> <output_dir>`` that writes
    ``page-<index>.png`` files plus a ``manifest.json`` into the output
    directory and exits non-zero on failure.
    """

    def __init__(self, command: list[str] | None):
        self.command = command

    def rasterize(self, pdf_path: Path, dpi: int, out_dir: Path) -> Path:
        """Run the adapter; returns the emitted manifest path."""
        if not self.command:
            raise ConfigurationError("no rasterizer adapter configured")
        if not pdf_path.exists():
            raise MissingFileError(f"pdf not found: {pdf_path}")
        out_dir.mkdir(parents=True, exist_ok=True)
        argv = [*self.command, str(pdf_path), str(dpi), str(out_dir)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise AdapterError(
                f"rasterizer adapter exited {proc.returncode}",
                output=(proc.stdout + proc.stderr).strip(),
            )
        manifest = out_dir / "manifest.json"
        if not manifest.exists():
            raise AdapterError(
                "rasterizer adapter produced no manifest", output=proc.stdout.strip()
            )
        return manifest


def rasterize_pdf(
    pdf_path: Path | str,
    dpi: int = DEFAULT_DPI,
    adapter: RasterizerAdapter | None = None,
    out_dir: Path | None = None,
) -> PageBundle:
    """Rasterize a PDF through the configured adapter into a bundle.

    One page image per PDF page, in document order, at the requested dpi.
    """
    if adapter is None or not adapter.command:
        raise ConfigurationError("no rasterizer adapter configured")
    pdf_path = Path(pdf_path)
    if out_dir is None:
        out_dir = Path(tempfile.mkdtemp(prefix="gradepipe-raster-"))
    manifest = adapter.rasterize(pdf_path, dpi, out_dir)
    bundle = load_bundle(manifest)
    logger.info("rasterized %s at %d dpi: %d pages", pdf_path.name, dpi, len(bundle.pages))
    return bundle
