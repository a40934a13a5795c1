"""Bundle loading, manifest validation, and the rasterizer adapter."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from gradepipe.errors import (
    AdapterError,
    ConfigurationError,
    DuplicatePageIndexError,
    EmptyBundleError,
    MissingFileError,
    UnreadableImageError,
    ValidationError,
)
from gradepipe.ingest import (
    PageBundle,
    PageImage,
    RasterizerAdapter,
    load_bundle,
    load_page_image,
    rasterize_pdf,
    write_manifest,
)

from conftest import gray_page


def save_png(path: Path, width=40, height=30, value=200, rgb=False) -> Path:
    shape = (height, width, 3) if rgb else (height, width)
    Image.fromarray(np.full(shape, value, dtype=np.uint8)).save(path)
    return path


def make_manifest(tmp_path: Path, n_pages=2, **overrides) -> Path:
    files = [save_png(tmp_path / f"page-{i}.png") for i in range(n_pages)]
    manifest = {
        "bundle_id": "b1",
        "kind": "answer_sheet",
        "pages": [{"index": i, "file": f.name} for i, f in enumerate(files)],
    }
    manifest.update(overrides)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


def test_load_bundle_round_trip(tmp_path):
    bundle = load_bundle(make_manifest(tmp_path))
    assert bundle.bundle_id == "b1"
    assert bundle.kind == "answer_sheet"
    assert [p.page_index for p in bundle.pages] == [0, 1]
    assert bundle.pages[0].width == 40 and bundle.pages[0].height == 30
    assert bundle.pages[0].source_path == tmp_path / "page-0.png"


def test_load_bundle_orders_by_manifest_not_filesystem(tmp_path):
    save_png(tmp_path / "zzz.png", value=10)
    save_png(tmp_path / "aaa.png", value=20)
    path = make_manifest(tmp_path, pages=[
        {"index": 1, "file": "aaa.png"},
        {"index": 0, "file": "zzz.png"},
    ])
    bundle = load_bundle(path)
    assert bundle.pages[0].pixels[0, 0] == 10
    assert bundle.pages[1].pixels[0, 0] == 20


def test_load_bundle_missing_manifest(tmp_path):
    with pytest.raises(MissingFileError):
        load_bundle(tmp_path / "nope.json")


def test_load_bundle_invalid_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError):
        load_bundle(path)


@pytest.mark.parametrize("missing", ["bundle_id", "kind", "pages"])
def test_load_bundle_missing_field(tmp_path, missing):
    path = make_manifest(tmp_path)
    manifest = json.loads(path.read_text())
    del manifest[missing]
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValidationError):
        load_bundle(path)


def test_load_bundle_empty_pages(tmp_path):
    with pytest.raises(EmptyBundleError):
        load_bundle(make_manifest(tmp_path, pages=[]))


def test_load_bundle_duplicate_index(tmp_path):
    files = [save_png(tmp_path / f"p{i}.png") for i in range(2)]
    path = make_manifest(tmp_path, pages=[
        {"index": 0, "file": files[0].name},
        {"index": 0, "file": files[1].name},
    ])
    with pytest.raises(DuplicatePageIndexError):
        load_bundle(path)


def test_load_bundle_missing_image_is_atomic(tmp_path):
    path = make_manifest(tmp_path)
    manifest = json.loads(path.read_text())
    manifest["pages"][1]["file"] = "gone.png"
    path.write_text(json.dumps(manifest))
    with pytest.raises(MissingFileError):
        load_bundle(path)


def test_load_bundle_noncontiguous_indices(tmp_path):
    files = [save_png(tmp_path / f"p{i}.png") for i in range(2)]
    path = make_manifest(tmp_path, pages=[
        {"index": 0, "file": files[0].name},
        {"index": 2, "file": files[1].name},
    ])
    with pytest.raises(ValidationError):
        load_bundle(path)


def test_load_bundle_unknown_kind(tmp_path):
    with pytest.raises(ValidationError):
        load_bundle(make_manifest(tmp_path, kind="poster"))


def test_load_page_image_unreadable(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"this is not a png")
    with pytest.raises(UnreadableImageError):
        load_page_image(path, 0)


def test_load_page_image_rgb_kept(tmp_path):
    path = save_png(tmp_path / "c.png", rgb=True)
    page = load_page_image(path, 0)
    assert page.is_rgb and page.pixels.shape == (30, 40, 3)


def test_page_image_validation():
    with pytest.raises(ValidationError):
        PageImage(width=10, height=10, pixels=np.zeros((5, 10), np.uint8),
                  page_index=0)
    with pytest.raises(ValidationError):
        PageImage(width=10, height=10,
                  pixels=np.zeros((10, 10, 4), np.uint8), page_index=0)
    with pytest.raises(ValidationError):
        PageImage(width=10, height=10,
                  pixels=np.zeros((10, 10), np.float32), page_index=0)
    with pytest.raises(ValidationError):
        PageImage(width=0, height=10, pixels=np.zeros((10, 0), np.uint8),
                  page_index=0)


def test_gray_rgb_conversions_preserve_geometry():
    page = gray_page(20, 10, value=128)
    rgb = page.to_rgb()
    assert rgb.pixels.shape == (10, 20, 3)
    assert (rgb.pixels == 128).all()
    back = rgb.to_gray()
    assert back.pixels.shape == (10, 20)
    assert rgb.to_rgb() is rgb and back.to_gray() is back


def test_bundle_page_indices_must_be_contiguous():
    with pytest.raises(ValidationError):
        PageBundle(bundle_id="b", kind="answer_sheet",
                   pages=[gray_page(page_index=1)])


def test_bundle_metadata_is_deterministic(tmp_path):
    bundle = load_bundle(make_manifest(tmp_path))
    assert bundle.metadata() == bundle.metadata()
    assert bundle.metadata()["pages"][0]["width"] == 40


def test_write_manifest_round_trip(tmp_path):
    files = [save_png(tmp_path / f"pg{i}.png") for i in range(3)]
    manifest = tmp_path / "m.json"
    write_manifest(manifest, "bx", "question_paper", files, source_name="doc")
    bundle = load_bundle(manifest)
    assert bundle.bundle_id == "bx"
    assert bundle.kind == "question_paper"
    assert bundle.source_name == "doc"
    assert len(bundle.pages) == 3


ADAPTER_OK = """\
import json, sys
from pathlib import Path
import numpy as np
from PIL import Image
pdf, dpi, out = sys.argv[1], int(sys.argv[2]), Path(sys.argv[3])
files = []
for i in range(2):
    p = out / f"page-{i}.png"
    Image.fromarray(np.full((20, 30), 250, dtype=np.uint8)).save(p)
    files.append(p)
(out / "manifest.json").write_text(json.dumps({
    "bundle_id": "from-pdf", "kind": "answer_sheet",
    "pages": [{"index": i, "file": f.name} for i, f in enumerate(files)],
}))
"""

ADAPTER_FAIL = """\
import sys
print("boom diagnostics")
sys.exit(3)
"""


def write_adapter(tmp_path: Path, body: str) -> RasterizerAdapter:
    script = tmp_path / "adapter.py"
    script.write_text(body)
    return RasterizerAdapter([sys.executable, str(script)])


def test_adapter_success(tmp_path):
    (tmp_path / "doc.pdf").write_bytes(b"%PDF-stub")
    adapter = write_adapter(tmp_path, ADAPTER_OK)
    bundle = rasterize_pdf(tmp_path / "doc.pdf", dpi=150, adapter=adapter,
                           out_dir=tmp_path / "out")
    assert bundle.bundle_id == "from-pdf"
    assert len(bundle.pages) == 2


def test_adapter_failure_carries_output(tmp_path):
    (tmp_path / "doc.pdf").write_bytes(b"%PDF-stub")
    adapter = write_adapter(tmp_path, ADAPTER_FAIL)
    with pytest.raises(AdapterError) as exc_info:
        rasterize_pdf(tmp_path / "doc.pdf", adapter=adapter,
                      out_dir=tmp_path / "out")
    assert "boom diagnostics" in exc_info.value.output


def test_adapter_without_manifest(tmp_path):
    (tmp_path / "doc.pdf").write_bytes(b"%PDF-stub")
    adapter = write_adapter(tmp_path, "import sys\n")
    with pytest.raises(AdapterError):
        rasterize_pdf(tmp_path / "doc.pdf", adapter=adapter,
                      out_dir=tmp_path / "out")


def test_adapter_missing_pdf(tmp_path):
    adapter = write_adapter(tmp_path, ADAPTER_OK)
    with pytest.raises(MissingFileError):
        adapter.rasterize(tmp_path / "none.pdf", 150, tmp_path / "out")


def test_no_adapter_configured(tmp_path):
    with pytest.raises(ConfigurationError):
        rasterize_pdf(tmp_path / "doc.pdf", adapter=None)
    with pytest.raises(ConfigurationError):
        RasterizerAdapter(None).rasterize(tmp_path / "doc.pdf", 150, tmp_path)


def test_reference_adapter_contract(tmp_path):
    """The shipped fake rasterizer obeys the adapter command contract."""
    stub = tmp_path / "doc.json"
    stub.write_text(json.dumps({
        "bundle_id": "ref", "kind": "question_paper",
        "pages": [{"width": 100, "height": 80,
                   "words": [{"text": "Q1", "x0": 5, "y0": 5,
                              "x1": 30, "y1": 20, "confidence": 0.9}]}],
    }))
    script = Path(__file__).resolve().parents[1] / "scripts" / "fake_rasterizer.py"
    adapter = RasterizerAdapter([sys.executable, str(script)])
    bundle = rasterize_pdf(stub, dpi=150, adapter=adapter,
                           out_dir=tmp_path / "out")
    assert bundle.bundle_id == "ref"
    assert bundle.pages[0].width == 100
    sidecar = tmp_path / "out" / "page-0.png.words.json"
    assert sidecar.exists()
