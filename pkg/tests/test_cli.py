"""Drive the whole pipeline through the command-line entry point."""

from __future__ import annotations

import json

import pytest

from gradepipe.cli import main
from gradepipe.store import Store
from gradepipe.synth import NAME_BOX, ROLL_BOX, make_corpus, write_calibrated_log


def fmt_box(box) -> str:
    return ",".join(str(v) for v in box)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")

    def answers_for(sheet_index: int, qid: str) -> list[str]:
        if sheet_index % 2 == 1:
            return ["surely", f"term{qid[1:]}", "applies"]
        return ["plain", "filler", "words"]

    corpus = make_corpus(root / "corpus", n_sheets=6, n_questions=4,
                         seed=7, n_corrupted=2, answers_for=answers_for)
    return root, corpus


@pytest.fixture(scope="module")
def db_path(workdir):
    root, corpus = workdir
    db = root / "exam.db"

    def run(*args: str) -> int:
        return main(["--db", str(db), *args])

    assert run("create-exam", "--exam", "e1", "--name", "CLI Exam") == 0
    assert run("ingest", "--exam", "e1",
               "--manifest", str(corpus.truth.manifest)) == 0
    for manifest in corpus.sheet_manifests.values():
        assert run("ingest", "--exam", "e1", "--manifest", str(manifest)) == 0

    assert run("detect-questions", "--exam", "e1") == 0

    edits = root / "edits.json"
    edits.write_text(json.dumps(
        [{"op": "update", "question_id": "q2", "question_type": "numerical"}]))
    assert run("confirm-questions", "--exam", "e1",
               "--edits", str(edits)) == 0

    assert run("map-identities", "--exam", "e1",
               "--roster", str(corpus.roster_csv),
               "--name-box", fmt_box(NAME_BOX),
               "--roll-box", fmt_box(ROLL_BOX)) == 0
    assert run("split", "--exam", "e1", "--seed", "11") == 0

    keywords = root / "keywords.json"
    keywords.write_text(json.dumps([
        {"question_id": f"q{i}", "keywords": [f"term{i}"], "max_score": 5}
        for i in range(1, 5)]))
    assert run("set-keywords", "--exam", "e1", "--keywords", str(keywords)) == 0
    assert run("highlight", "--exam", "e1") == 0
    assert run("crop", "--exam", "e1",
               "--out-dir", str(root / "crops")) == 0

    assert run("user-add", "--user-id", "g1", "--role", "grader",
               "--token", "gtok") == 0
    assert run("assign-grader", "--exam", "e1", "--grader", "g1",
               "--questions", "q1,q2,q3,q4") == 0
    assert run("open-grading", "--exam", "e1") == 0
    return db


def test_pipeline_state_after_cli_run(db_path, workdir):
    _, corpus = workdir
    store = Store(db_path)
    regions, _ = store.get_questions("e1")
    assert [r.question_id for r in regions] == ["q1", "q2", "q3", "q4"]
    assert all(r.confirmed for r in regions)
    assert regions[1].question_type == "numerical"

    mappings = store.get_mappings("e1")
    assert all(m.status == "auto" for m in mappings)
    assert {m.bundle_id: m.matched_roll for m in mappings} == corpus.sheet_rolls

    halves = store.split_halves("e1")
    assert sorted(halves.values()).count("hna") == 3
    assert store.grading_open("e1")


def test_highlight_classes_follow_content(db_path):
    store = Store(db_path)
    split = store.get_split("e1")
    # Odd sheets carry every keyword; even sheets carry none.
    for bundle_id in split.s_h:
        assert int(bundle_id[1:]) % 2 == 1
    for bundle_id in split.s_nh:
        assert int(bundle_id[1:]) % 2 == 0
    assert split.s_h | split.s_nh == split.s_ha


def test_crops_written_per_mapped_sheet(db_path, workdir):
    root, corpus = workdir
    crops = root / "crops"
    for bundle_id in corpus.sheet_manifests:
        for qid in ("q1", "q2", "q3", "q4"):
            png = crops / bundle_id / f"{qid}.png"
            assert png.is_file(), png
            assert png.with_name(png.name + ".words.json").is_file()


def test_correct_mapping_cli(db_path):
    rc = main(["--db", str(db_path), "correct-mapping", "--exam", "e1",
               "--bundle", "s01", "--unmap"])
    assert rc == 0
    store = Store(db_path)
    assert store.roll_for_bundle("e1", "s01") is None
    roll = store.get_roster("e1")[0].roll
    rc = main(["--db", str(db_path), "correct-mapping", "--exam", "e1",
               "--bundle", "s01", "--roll", roll])
    assert rc == 0
    assert store.roll_for_bundle("e1", "s01") == roll


def test_export_events_and_analyze_from_store(db_path, tmp_path):
    store = Store(db_path)
    for qid in ("q1", "q2", "q3", "q4"):
        t = 1_000
        while (b := store.claim_next("e1", "g1", qid, t)) is not None:
            store.record_grade("e1", "g1", b, qid, 2.0, t + 700)
            t += 1_000
    out_csv = tmp_path / "events.csv"
    rc = main(["--db", str(db_path), "export-events", "--exam", "e1",
               "--out", str(out_csv)])
    assert rc == 0
    assert out_csv.read_text().startswith("event_id,grader_id,")

    rc = main(["--db", str(db_path), "analyze", "--exam", "e1",
               "--out-dir", str(tmp_path / "rep")])
    assert rc == 0
    payload = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert payload["summary"]["avg_reduction_per_response_pct"] == 0.0


def test_analyze_from_calibrated_csv(tmp_path, capsys):
    log = tmp_path / "cal.csv"
    write_calibrated_log(log)
    rc = main(["analyze", "--events", str(log),
               "--out-dir", str(tmp_path / "rep")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "avg reduction per response: 31.00%" in out
    assert "avg reduction per sheet:    33.00%" in out
    payload = json.loads((tmp_path / "rep" / "report.json").read_text())
    per_type = payload["summary"]["per_type_reduction_pct"]
    assert per_type == {"long": 23.0, "numerical": 34.0, "short": 34.0}


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    db = tmp_path / "fresh.db"
    rc = main(["--db", str(db), "open-grading", "--exam", "ghost"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
    rc = main(["--db", str(db), "ingest", "--exam", "e1"])
    assert rc == 1
