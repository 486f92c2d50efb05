"""
Tests for edit extraction, application and the edit impact surface.
"""
import asyncio
import random

import pytest

from conftest import kpop_path
from engine.edit_engine import (
    Edit, EditStatement, StructuredEdit, apply_edit, apply_edit_records, arbitrate, check_surface,
    extract_edit, impact_surface, load_edits, parse_edit_record, rebuild_surface, surface_of,
)
from engine.layered_kg import LayeredStore, build_base, SymbolTable
from engine.oracles import Candidate, LexiconDetector
from utils.errors import CaseMismatch, ExtractionFailed, ParseError, SequenceError, UnknownCase


@pytest.fixture
def store():
    symbols = SymbolTable()
    base = build_base([("BlackPink", "genre", "K-pop"), ("K-pop", "origin_country", "South Korea")], symbols)
    return LayeredStore(base, symbols)


def _edit(store, case_id, s, r, o, seq=None):
    return Edit(case_id, store.intern(s), store.intern(r), store.intern(o), seq=seq)


def test_apply_stamps_sequence_and_reports_surface_delta(store):
    overlay = store.create_overlay("A")
    first, delta = apply_edit(overlay, _edit(store, "A", "K-pop", "origin_country", "Turkey"))
    assert first.seq == 1
    assert {s.text for s in delta.subjects} == {"K-pop"}
    assert {r.text for r in delta.relations} == {"origin_country"}

    second, delta = apply_edit(overlay, _edit(store, "A", "K-pop", "origin_country", "Germany"))
    assert second.seq == 2
    assert not delta.subjects and not delta.relations
    assert overlay.get(store.intern("K-pop"), store.intern("origin_country")).text == "Germany"


def test_last_writer_wins_matches_arbitration(store):
    overlay = store.create_overlay("A")
    apply_edit(overlay, _edit(store, "A", "K-pop", "origin_country", "Turkey"))
    apply_edit(overlay, _edit(store, "A", "BlackPink", "genre", "J-pop"))
    apply_edit(overlay, _edit(store, "A", "K-pop", "origin_country", "Germany"))
    assert overlay.delta == arbitrate(overlay.edits)
    assert len(overlay) == 2
    assert check_surface(overlay)


def test_rejects_wrong_case_and_stale_sequence(store):
    overlay = store.create_overlay("A")
    with pytest.raises(CaseMismatch):
        apply_edit(overlay, _edit(store, "B", "K-pop", "origin_country", "Turkey"))
    apply_edit(overlay, _edit(store, "A", "K-pop", "origin_country", "Turkey", seq=5))
    with pytest.raises(SequenceError):
        apply_edit(overlay, _edit(store, "A", "K-pop", "origin_country", "Germany", seq=5))
    assert len(overlay.edits) == 1


def test_arbitrate_refuses_mixed_cases(store):
    log = [_edit(store, "A", "K-pop", "genre", "x", seq=1), _edit(store, "B", "K-pop", "genre", "y", seq=2)]
    with pytest.raises(CaseMismatch):
        arbitrate(log)


def test_surface_snapshots_do_not_move(store):
    overlay = store.create_overlay("A")
    apply_edit(overlay, _edit(store, "A", "K-pop", "origin_country", "Turkey"))
    snapshot = impact_surface(store, "A")
    apply_edit(overlay, _edit(store, "A", "BlackPink", "genre", "J-pop"))
    assert {s.text for s in snapshot.subjects} == {"K-pop"}
    assert surface_of(overlay) == rebuild_surface("A", overlay.edits)
    with pytest.raises(UnknownCase):
        impact_surface(store, "Z")


def test_surface_touches():
    symbols = SymbolTable()
    k, r, g = symbols.intern("K-pop"), symbols.intern("origin_country"), symbols.intern("genre")
    surface = rebuild_surface("A", [Edit("A", k, r, symbols.intern("Turkey"), seq=1)])
    assert surface.touches(subject=k)
    assert surface.touches(relation=r)
    assert not surface.touches(subject=symbols.intern("BTS"), relation=g)
    assert not surface.touches()


def test_parse_edit_record_variants():
    assert parse_edit_record({"case_id": 7}) == "7"
    assert parse_edit_record({"case_id": "A", "text": "K-pop comes from Turkey."}) == \
        EditStatement("K-pop comes from Turkey.", "A")
    assert parse_edit_record({"case_id": "A", "s": "K-pop", "r": "origin_country", "o_new": "Turkey"}) == \
        StructuredEdit("A", "K-pop", "origin_country", "Turkey")
    for bad in ({"s": "x"}, {"case_id": "A", "s": "K-pop", "r": "genre"}, {"case_id": "A", "text": "  "},
                {"case_id": "A", "s": "K-pop", "r": "genre", "o_new": 3}):
        with pytest.raises(ParseError):
            parse_edit_record(bad, line_no=4)


def test_extract_edit_from_text(store):
    detector = LexiconDetector.from_store(store, extra_entities=["Germany"])
    stmt = EditStatement("The origin country of K-pop is Germany.", "B")
    edit = asyncio.run(extract_edit(stmt, detector, store.symbols, base=store.base))
    assert (edit.s.text, edit.r.text, edit.o_new.text) == ("K-pop", "origin_country", "Germany")
    assert edit.o_true.text == "South Korea"
    assert edit.case_id == "B"


def test_extract_edit_failures(store):
    detector = LexiconDetector.from_store(store, extra_entities=["Germany"])
    with pytest.raises(ExtractionFailed):
        asyncio.run(extract_edit(EditStatement("Nothing to see here.", "B"), detector, store.symbols))
    with pytest.raises(ExtractionFailed):
        asyncio.run(extract_edit(EditStatement("The genre of K-pop.", "B"), detector, store.symbols))
    with pytest.raises(ExtractionFailed):
        asyncio.run(extract_edit(StructuredEdit("B", "K-pop", " ", "Turkey"), detector, store.symbols))


def test_apply_edits_file(kpop):
    store, _, _ = kpop
    assert store.case_ids() == ["A", "B", "C"]
    k, r = store.intern("K-pop"), store.intern("origin_country")
    assert store.overlay("A").get(k, r).text == "Turkey"
    assert store.overlay("B").get(k, r).text == "Germany"
    assert len(store.overlay("C")) == 0
    assert all(check_surface(store.overlay(c)) for c in store.case_ids())


def test_text_edits_need_a_detector(store):
    records = load_edits(kpop_path("edits.jsonl"))
    with pytest.raises(ExtractionFailed):
        asyncio.run(apply_edit_records(store, records))


class FixedDetector:
    """Detector that always reports the same relation and entities at score 1.0."""

    def __init__(self, store, relation, entities):
        self.relation = store.intern(relation)
        self.entities = [store.intern(e) for e in entities]

    async def detect_relation(self, query):
        return self.relation, 1.0

    async def detect_entities(self, query):
        return [Candidate(e, 1.0) for e in self.entities]


def test_extract_edit_with_a_certain_detector(store):
    detector = FixedDetector(store, "origin_country", ["K-pop", "Turkey"])
    stmt = EditStatement("Rewrite this please.", "A")

    anchored = asyncio.run(extract_edit(stmt, detector, store.symbols, base=store.base))
    assert (anchored.s.text, anchored.r.text, anchored.o_new.text) == ("K-pop", "origin_country", "Turkey")
    assert anchored.o_true.text == "South Korea"
    assert anchored.case_id == "A" and anchored.seq is None

    unanchored = asyncio.run(extract_edit(stmt, detector, store.symbols))
    assert (unanchored.s.text, unanchored.o_new.text, unanchored.o_true) == ("K-pop", "Turkey", None)


def test_interleaved_schedule_matches_per_case_replay(store):
    rng = random.Random(11)
    objects = ["Turkey", "Germany", "Peru", "Japan"]
    schedule = [
        (case_id, rng.choice(["K-pop", "BlackPink"]), rng.choice(["origin_country", "genre"]), rng.choice(objects))
        for case_id in ("A", "B", "C") for _ in range(8)
    ]
    rng.shuffle(schedule)

    interleaved = store.fresh_session()
    for case_id in ("A", "B", "C"):
        interleaved.create_overlay(case_id)
    for case_id, s, r, o in schedule:
        apply_edit(interleaved.overlay(case_id), _edit(store, case_id, s, r, o))

    replayed = store.fresh_session()
    for case_id in ("A", "B", "C"):
        overlay = replayed.create_overlay(case_id)
        for edit_case, s, r, o in schedule:
            if edit_case == case_id:
                apply_edit(overlay, _edit(store, case_id, s, r, o))

    fingerprint = store.base.fingerprint()
    for case_id in ("A", "B", "C"):
        mixed, alone = interleaved.overlay(case_id), replayed.overlay(case_id)
        assert mixed.delta == alone.delta
        assert mixed.items() == alone.items()
        assert mixed.edits == alone.edits
        assert impact_surface(interleaved, case_id) == impact_surface(replayed, case_id)
    assert store.base.fingerprint() == fingerprint
