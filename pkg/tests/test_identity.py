"""Edit distance, roll extraction, and roster mapping."""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, strategies as st

from gradepipe.errors import ConflictError, ValidationError
from gradepipe.identity import (
    IdentityMapping,
    RosterEntry,
    correct_mapping,
    edit_distance,
    extract_identity,
    load_roster,
    map_to_roster,
)
from gradepipe.ingest import PageBundle

from conftest import gray_page, wb


def oracle_edit_distance(a: str, b: str) -> int:
    """Textbook full-matrix Levenshtein, written independently."""
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + cost)
    return d[m][n]


def all_strings(alphabet: str, max_len: int):
    for length in range(max_len + 1):
        yield from ("".join(p) for p in itertools.product(alphabet, repeat=length))


def test_edit_distance_exhaustive_short_strings():
    universe = list(all_strings("abc", 3))
    for a in universe:
        for b in universe:
            assert edit_distance(a, b) == oracle_edit_distance(a, b)


def test_edit_distance_random_pairs_against_oracle():
    rng = random.Random(20260817)
    digits = "0123456789"
    for _ in range(300):
        a = "".join(rng.choice(digits) for _ in range(rng.randrange(0, 13)))
        b = "".join(rng.choice(digits) for _ in range(rng.randrange(0, 13)))
        assert edit_distance(a, b) == oracle_edit_distance(a, b)


def test_edit_distance_known_cases():
    assert edit_distance("", "") == 0
    assert edit_distance("abc", "abc") == 0
    assert edit_distance("abc", "") == 3
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("flaw", "lawn") == 2
    assert edit_distance("2023001", "2023010") == 2


short_text = st.text(alphabet="0123456789ab", max_size=10)


@given(short_text, short_text)
def test_edit_distance_symmetric_and_bounded(a, b):
    d = edit_distance(a, b)
    assert d == edit_distance(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
    assert (d == 0) == (a == b)


@given(short_text, short_text, short_text)
def test_edit_distance_triangle_inequality(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


@given(short_text, short_text)
def test_edit_distance_agrees_with_oracle(a, b):
    assert edit_distance(a, b) == oracle_edit_distance(a, b)


# -- roster -------------------------------------------------------------------


def test_load_roster(tmp_path):
    path = tmp_path / "roster.csv"
    path.write_text("roll,name\n101,Ada\n102,Grace\n")
    roster = load_roster(path)
    assert roster == [RosterEntry("101", "Ada"), RosterEntry("102", "Grace")]


def test_load_roster_duplicate_roll(tmp_path):
    path = tmp_path / "roster.csv"
    path.write_text("roll,name\n101,Ada\n101,Grace\n")
    with pytest.raises(ValidationError):
        load_roster(path)


def test_load_roster_bad_header(tmp_path):
    path = tmp_path / "roster.csv"
    path.write_text("id,who\n101,Ada\n")
    with pytest.raises(ValidationError):
        load_roster(path)


def test_roster_entry_requires_both_fields():
    with pytest.raises(ValidationError):
        RosterEntry("", "Ada")
    with pytest.raises(ValidationError):
        RosterEntry("101", "")


# -- extraction ---------------------------------------------------------------


class StaticBackend:
    def __init__(self, words):
        self.words = words

    def recognize(self, page):
        return self.words


def identity_sheet(words) -> PageBundle:
    return PageBundle(bundle_id="s1", kind="answer_sheet",
                      pages=[gray_page(1000, 600)])


def test_extract_identity_by_box_centers():
    words = [
        wb("Ada", 310, 20, 370, 45),
        wb("Lovelace", 380, 20, 500, 45),
        wb("20230017", 710, 20, 840, 45),
        wb("unrelated", 100, 300, 260, 330),
    ]
    name, roll = extract_identity(identity_sheet(words), (300, 10, 690, 60),
                                  (700, 10, 990, 60), StaticBackend(words))
    assert name == "Ada Lovelace"
    assert roll == "20230017"


def test_extract_identity_blank_boxes():
    name, roll = extract_identity(identity_sheet([]), (300, 10, 690, 60),
                                  (700, 10, 990, 60), StaticBackend([]))
    assert name == "" and roll == ""


def test_extract_identity_validates_boxes():
    with pytest.raises(ValidationError):
        extract_identity(identity_sheet([]), (300, 10, 690, 6000),
                         (700, 10, 990, 60), StaticBackend([]))


# -- mapping -------------------------------------------------------------------


def roster(*rolls: str) -> list[RosterEntry]:
    return [RosterEntry(r, f"Student {i}") for i, r in enumerate(rolls, 1)]


def test_map_exact_and_near_matches():
    mappings = map_to_roster(
        [("s1", "11111111", ""), ("s2", "22221111", ""), ("s3", "03333990", "")],
        roster("11111111", "22222111", "33333999"))
    by_bundle = {m.bundle_id: m for m in mappings}
    assert by_bundle["s1"].matched_roll == "11111111"
    assert by_bundle["s1"].status == "auto"
    assert by_bundle["s1"].edit_distance == 0
    assert by_bundle["s2"].matched_roll == "22222111"
    assert by_bundle["s2"].edit_distance == 1
    assert by_bundle["s3"].matched_roll == "33333999"
    assert by_bundle["s3"].edit_distance == oracle_edit_distance(
        "03333990", "33333999") == 2


def test_map_beyond_threshold_unmapped():
    (m,) = map_to_roster([("s1", "99990000", "")], roster("11111111"),
                         threshold=2)
    assert m.status == "unmapped" and m.matched_roll is None


def test_map_tie_stays_unmapped():
    (m,) = map_to_roster([("s1", "1111", "")], roster("1110", "1112"))
    assert m.status == "unmapped"
    assert m.edit_distance == 1


def test_map_empty_candidate_unmapped():
    (m,) = map_to_roster([("s1", "", "")], roster("1110"))
    assert m.status == "unmapped"


def test_map_is_injective_better_match_wins():
    # Both sheets point at the same roll; the closer one gets it.
    mappings = map_to_roster(
        [("s1", "12340000", ""), ("s2", "12345678", "")],
        roster("12345678", "99999999"))
    by_bundle = {m.bundle_id: m for m in mappings}
    assert by_bundle["s2"].matched_roll == "12345678"
    assert by_bundle["s1"].status == "unmapped"


def test_map_empty_roster_rejected():
    with pytest.raises(ValidationError):
        map_to_roster([("s1", "1", "")], [])


@given(st.integers(min_value=1, max_value=40), st.randoms(use_true_random=False))
def test_map_never_double_assigns(n, rng):
    entries = roster(*(f"{i:04d}" for i in range(0, n * 7, 7)))
    candidates = []
    for i in range(n):
        base = entries[rng.randrange(n)].roll
        if rng.random() < 0.5:
            pos = rng.randrange(4)
            base = base[:pos] + rng.choice("0123456789") + base[pos + 1:]
        candidates.append((f"s{i}", base, ""))
    mappings = map_to_roster(candidates, entries)
    matched = [m.matched_roll for m in mappings if m.matched_roll]
    assert len(matched) == len(set(matched))
    for m in mappings:
        if m.status == "auto":
            assert m.edit_distance <= 2


# -- manual correction ----------------------------------------------------------


def base_mappings() -> list[IdentityMapping]:
    return map_to_roster([("s1", "0001", ""), ("s2", "xxxx", "")],
                         roster("0001", "0202"))


def test_correct_mapping_assign_and_release():
    entries = roster("0001", "0202")
    updated = correct_mapping(base_mappings(), "s2", "0202", entries)
    m2 = next(m for m in updated if m.bundle_id == "s2")
    assert m2.status == "manual" and m2.matched_roll == "0202"
    released = correct_mapping(updated, "s1", None, entries)
    m1 = next(m for m in released if m.bundle_id == "s1")
    assert m1.status == "unmapped" and m1.matched_roll is None


def test_correct_mapping_conflict_refused():
    entries = roster("0001", "0202")
    with pytest.raises(ConflictError):
        correct_mapping(base_mappings(), "s2", "0001", entries)


def test_correct_mapping_unknown_targets():
    entries = roster("0001", "0202")
    with pytest.raises(ValidationError):
        correct_mapping(base_mappings(), "s9", "0202", entries)
    with pytest.raises(ValidationError):
        correct_mapping(base_mappings(), "s2", "9999", entries)
