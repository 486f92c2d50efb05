"""
Tests for layer routing, candidate filtering and the three retrieval stages.
"""
import asyncio
import random
import statistics

import pytest

from conftest import open_kpop
from engine.edit_engine import Edit, impact_surface, rebuild_surface
from engine.layered_kg import Layer, SymbolTable
from engine.retrieval import (
    Candidate, RetrievalConfig, Stage, SubQuestion, answer_directly, answer_subquestion,
    filter_high_confidence, outlier_cutoff, route, route_layer, suppress_irrelevant,
)

CFG = RetrievalConfig(tau=0.6, lam=1.0)


def _candidates(scores):
    symbols = SymbolTable()
    return [Candidate(symbols.intern(f"e{i}"), s) for i, s in enumerate(scores)]


def test_filter_keeps_both_of_two_close_scores():
    kept = filter_high_confidence(_candidates([0.9, 0.7, 0.3]), CFG)
    assert [c.score for c in kept] == [0.9, 0.7]
    assert outlier_cutoff([0.9, 0.7], 1.0) == pytest.approx(0.7, abs=1e-12)


def test_filter_drops_low_outlier():
    scores = [0.9, 0.88, 0.61]
    expected_cutoff = statistics.fmean(scores) - statistics.pstdev(scores)
    assert outlier_cutoff(scores, 1.0) == pytest.approx(expected_cutoff, abs=1e-12)
    kept = filter_high_confidence(_candidates(scores), CFG)
    assert [c.score for c in kept] == [0.9, 0.88]


def test_filter_empty_when_nothing_reaches_tau():
    assert filter_high_confidence(_candidates([0.5, 0.2]), CFG) == []
    assert filter_high_confidence([], CFG) == []


def test_filter_sorts_and_is_stable_on_ties():
    cands = _candidates([0.7, 0.9, 0.7])
    kept = filter_high_confidence(cands, CFG)
    assert [c.entity.text for c in kept] == ["e1", "e0", "e2"]


def test_routing_is_set_membership_over_small_universe():
    rng = random.Random(5)
    symbols = SymbolTable()
    entities = [symbols.intern(f"entity-{i}") for i in range(20)]
    relations = [symbols.intern(f"relation-{i}") for i in range(10)]
    mismatches = 0
    for _ in range(20):
        log = [
            Edit("A", rng.choice(entities), rng.choice(relations), entities[0], seq=n + 1)
            for n in range(rng.randint(0, 6))
        ]
        surface = rebuild_surface("A", log)
        for e in entities:
            for r in relations:
                expected = Layer.OVERLAY if (e in surface.subjects or r in surface.relations) else Layer.BASE
                mismatches += route_layer(e, r, surface) != expected
        mismatches += route_layer(None, None, surface) != Layer.BASE
    assert mismatches == 0


def test_suppression_only_hits_unmentioned_edited_subjects():
    symbols = SymbolTable()
    k, b = symbols.intern("K-pop"), symbols.intern("BlackPink")
    surface = rebuild_surface("A", [Edit("A", k, symbols.intern("origin_country"), symbols.intern("Turkey"), seq=1)])
    cands = [Candidate(k, 0.8), Candidate(b, 0.8)]

    out = suppress_irrelevant(cands, SubQuestion("What is the genre of BlackPink?"), surface, CFG)
    assert [c.score for c in out] == [0.4, 0.8]
    out = suppress_irrelevant(cands, SubQuestion("What is the origin country of K-pop?"), surface, CFG)
    assert [c.score for c in out] == [0.8, 0.8]


def test_route_uses_detector_guesses(kpop):
    store, oracles, _ = kpop
    surface = impact_surface(store, "A")
    assert asyncio.run(route(SubQuestion("What is the genre of BlackPink?"), surface, oracles.detector)) == Layer.BASE
    assert asyncio.run(route(SubQuestion("What is the origin country of K-pop?"), surface, oracles.detector)) == \
        Layer.OVERLAY


def _answer(store, oracles, case_id, text, hint=None):
    q = SubQuestion(text, subject_hint=store.symbols.lookup(hint) if hint else None)
    return asyncio.run(answer_subquestion(
        q, store.view(case_id), impact_surface(store, case_id), oracles, CFG, store.symbols,
    ))


def test_high_confidence_resolves_against_the_routed_layer(kpop):
    store, oracles, _ = kpop
    outcome = _answer(store, oracles, "A", "What is the origin country of K-pop?")
    assert (outcome.answer.text, outcome.layer, outcome.stage) == ("Turkey", Layer.OVERLAY, Stage.HIGH)
    assert str(outcome.resolved_triple) == "(K-pop, origin_country, Turkey)"

    outcome = _answer(store, oracles, "C", "What is the origin country of K-pop?")
    assert (outcome.answer.text, outcome.layer, outcome.stage) == ("South Korea", Layer.BASE, Stage.HIGH)


def test_low_confidence_lets_the_llm_pick_from_the_pool():
    store, oracles, _ = open_kpop({"Candidates:\n- K-pop": "K-pop"})
    outcome = _answer(store, oracles, "A", "What is the origin country of Korean pop music?")
    assert outcome.stage == Stage.LOW
    assert outcome.answer.text == "Turkey"
    assert outcome.layer == Layer.OVERLAY
    assert [c.entity.text for c in outcome.candidates_considered] == ["K-pop"]


def test_failure_stage_injects_edited_triples():
    store, oracles, _ = open_kpop({"(K-pop, origin_country, Turkey)": "Turkey"})
    outcome = _answer(store, oracles, "A", "What is the origin country of Korean pop music?")
    assert outcome.stage == Stage.FAILURE
    assert outcome.answer.text == "Turkey"
    assert [str(t) for t in outcome.injected] == ["(K-pop, origin_country, Turkey)"]

    failure_prompts = [p for p in oracles.transcript.prompts() if "Edited facts:" in p]
    assert failure_prompts
    assert all("(K-pop, origin_country, Turkey)" in p for p in failure_prompts)
    assert not any("Germany" in p for p in oracles.transcript.prompts())

    failure_entries = [e for e in oracles.transcript.entries if "Edited facts:" in (e["prompt_or_query"] or "")]
    assert {e["context"] for e in failure_entries} == {"(K-pop, origin_country, Turkey)"}


def test_failure_without_edit_scope_and_no_script_is_unanswered(kpop):
    store, oracles, _ = kpop
    outcome = _answer(store, oracles, "C", "What is the origin country of Zorblax?")
    assert outcome.stage == Stage.FAILURE
    assert outcome.answer is None and not outcome.answered
    assert outcome.injected == ()
    assert "Edited facts" not in oracles.transcript.prompts()[-1]
    assert "context" not in oracles.transcript.entries[-1]


def test_answer_directly_skips_the_graph():
    store, oracles, _ = open_kpop({"Question: What is the genre of BTS?": "K-pop"})
    outcome = asyncio.run(answer_directly(SubQuestion("What is the genre of BTS?"), oracles.llm, store.symbols))
    assert (outcome.answer.text, outcome.layer, outcome.stage) == ("K-pop", Layer.BASE, Stage.FAILURE)
    assert outcome.answer is store.symbols.lookup("K-pop")


def test_surface_and_view_must_belong_to_the_same_case(kpop):
    store, oracles, _ = kpop
    with pytest.raises(ValueError):
        asyncio.run(answer_subquestion(
            SubQuestion("What is the genre of BTS?"), store.view("A"), impact_surface(store, "B"),
            oracles, CFG, store.symbols,
        ))


def test_empty_sub_question_is_rejected():
    with pytest.raises(ValueError):
        SubQuestion("   ")
