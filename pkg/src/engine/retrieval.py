"""
Edit-aware retrieval for one sub-question.

The sub-question is routed to the Base or the Overlay layer (Overlay when
its subject or relation is in the case's edit impact surface), then
answered through three progressive stages:

  HighConfidence  candidates >= tau, low outliers below mu - lambda*sigma
                  dropped, tried in score order against the routed layer
  LowConfidence   nothing >= tau: the LLM picks an entity from the pool
  Failure         no resolution: the LLM answers, with the case's edited
                  triples injected when the relation is in edit scope
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from engine.layered_kg import Layer, Triple, resolve
from engine.oracles import Candidate
from utils.config import RetrievalConfig
from utils.errors import ScriptMiss
from utils.helpers import format_triple, mentions, normalize_text

__all__ = [
    "Candidate", "RetrievalConfig", "RetrievalOutcome", "Stage", "SubQuestion",
    "answer_directly", "answer_subquestion", "filter_high_confidence", "outlier_cutoff", "route",
    "route_layer", "suppress_irrelevant",
]

# Scores this far below the cutoff still count as meeting it
CUTOFF_EPSILON = 1e-12


class Stage(str, Enum):
    HIGH = "HighConfidence"
    LOW = "LowConfidence"
    FAILURE = "Failure"


@dataclass(frozen=True)
class SubQuestion:
    text: str
    position: int = 0
    subject_hint: object = None

    def __post_init__(self):
        if not normalize_text(self.text):
            raise ValueError("sub-question text must be non-empty")


@dataclass(frozen=True)
class RetrievalOutcome:
    answer: object                      # Symbol, or None when unanswered
    layer: Layer
    stage: Stage
    resolved_triple: Triple | None = None
    candidates_considered: tuple = ()
    injected: tuple = ()                # edited triples put into a Failure prompt

    @property
    def answered(self):
        return self.answer is not None

    def to_dict(self):
        return {
            "answer": self.answer.text if self.answer is not None else None,
            "layer": self.layer.value,
            "stage": self.stage.value,
            "triple": self.resolved_triple.to_dict() if self.resolved_triple else None,
            "candidates": [[c.entity.text, round(c.score, 6)] for c in self.candidates_considered],
            "injected": [t.to_dict() for t in self.injected],
        }


def route_layer(subject, relation, surface):
    """Overlay iff subject in S_edit or relation in P_edit; missing guesses never match."""
    if surface.touches(subject=subject, relation=relation):
        return Layer.OVERLAY
    return Layer.BASE


def _subject_guess(q, candidates):
    if q.subject_hint is not None:
        return q.subject_hint
    if candidates:
        best = max(candidates, key=lambda c: c.score)
        if best.score > 0.0:
            return best.entity
    return None


async def route(q, surface, detector):
    """Layer routing for a sub-question using the detector's subject/relation guesses."""
    candidates = await detector.detect_entities(q.text)
    relation = await detector.detect_relation(q.text)
    return route_layer(_subject_guess(q, candidates), relation[0] if relation else None, surface)


def outlier_cutoff(scores, lam):
    """mu - lambda * sigma with population sigma."""
    values = np.asarray(scores, dtype=float)
    return float(values.mean() - lam * values.std())


def filter_high_confidence(cands, cfg):
    """
    K' = scores >= tau; K'' = K' members >= mu - lambda*sigma of K',
    sorted by score descending (stable on ties). Empty if K' is empty.
    """
    kept = [c for c in cands if c.score >= cfg.tau]
    if not kept:
        return []
    cutoff = outlier_cutoff([c.score for c in kept], cfg.lam)
    survivors = [c for c in kept if c.score >= cutoff - CUTOFF_EPSILON]
    return sorted(survivors, key=lambda c: -c.score)


def suppress_irrelevant(cands, q, surface, cfg):
    """Down-weight edited subjects the sub-question does not mention: score * alpha."""
    if not surface.subjects:
        return list(cands)
    out = []
    for c in cands:
        if c.entity in surface.subjects and not mentions(q.text, c.entity.text):
            c = replace(c, score=c.score * cfg.suppression_alpha)
        out.append(c)
    return out


def _low_confidence_prompt(q, pool):
    options = "\n".join(f"- {c.entity.text}" for c in pool)
    return (
        "Pick the entity the question is about.\n"
        f"Question: {q.text}\n"
        f"Candidates:\n{options}\n"
        "Answer with one candidate exactly as written.\n"
        "Entity:"
    )


def _injected_facts(edited):
    """Edited triples as prompt text, or None when nothing is injected."""
    if not edited:
        return None
    return "\n".join(format_triple(s.text, r.text, o.text) for s, r, o in edited)


def _failure_prompt(q, edited):
    facts = _injected_facts(edited)
    if facts:
        return (
            "Answer the question using these edited facts, which override anything you know.\n"
            f"Edited facts:\n{facts}\n"
            f"Question: {q.text}\n"
            "Answer:"
        )
    return f"Answer the question with a single entity.\nQuestion: {q.text}\nAnswer:"


def _clean_reply(reply):
    lines = (reply or "").strip().splitlines()
    return normalize_text(lines[0]).strip(" .\"'") if lines else ""


async def _ask(llm, prompt, context=None):
    """LLM reply, or None when a scripted oracle has nothing for this prompt."""
    try:
        return await llm.complete(prompt, context=context)
    except ScriptMiss as e:
        logging.warning(f"⚠️ {e}")
        return None


def _try_resolve(view, entities, relation, layer):
    for entity in entities:
        hit = resolve(view, entity, relation, layer)
        if hit is not None:
            return entity, hit
    return None, None


async def answer_subquestion(q, view, surface, oracles, cfg, symbols):
    """Route, then run the High / Low / Failure stages. See module docstring."""
    if surface.case_id != view.case_id:
        raise ValueError(f"surface of case '{surface.case_id}' used with view of case '{view.case_id}'")

    detector, llm = oracles.detector, oracles.llm
    pool = await detector.detect_entities(q.text)
    relation_hit = await detector.detect_relation(q.text)
    relation = relation_hit[0] if relation_hit else None

    layer = route_layer(_subject_guess(q, pool), relation, surface)
    ranked = filter_high_confidence(suppress_irrelevant(pool, q, surface, cfg), cfg)
    considered = tuple(ranked)

    if ranked and relation is not None:
        entity, hit = _try_resolve(view, [c.entity for c in ranked], relation, layer)
        if hit is not None:
            logging.debug(f"🎯 q{q.position} high-confidence {entity}/{relation} -> {hit.object} [{layer.value}]")
            return RetrievalOutcome(hit.object, layer, Stage.HIGH, Triple(entity, relation, hit.object), considered)

    # K' is empty: ask the LLM for the most plausible entity from the unsuppressed pool
    if not ranked and pool:
        considered = tuple(pool)
        reply = await _ask(llm, _low_confidence_prompt(q, pool))
        if reply is not None and relation is not None:
            picked = symbols.lookup(_clean_reply(reply))
            if picked is not None and any(c.entity == picked for c in pool):
                hit = resolve(view, picked, relation, layer)
                if hit is not None:
                    logging.debug(f"🤔 q{q.position} low-confidence pick {picked} -> {hit.object} [{layer.value}]")
                    return RetrievalOutcome(hit.object, layer, Stage.LOW, Triple(picked, relation, hit.object), considered)

    # Failure stage: inject the case's edits for this relation when it is in edit scope
    edited = ()
    if relation is not None and relation in surface.relations:
        edited = tuple((s, r, o) for s, r, o in view.overlay.items() if r == relation)
    reply = await _ask(llm, _failure_prompt(q, edited), context=_injected_facts(edited))
    answer = None
    if reply is not None:
        text = _clean_reply(reply)
        if text:
            answer = symbols.lookup(text) or symbols.intern(text)
    logging.debug(f"🛟 q{q.position} failure stage ({len(edited)} edits injected) -> {answer}")
    return RetrievalOutcome(
        answer, layer, Stage.FAILURE, None, considered,
        tuple(Triple(s, r, o) for s, r, o in edited),
    )


async def answer_directly(q, llm, symbols):
    """No routing, no graph: the LLM answers the sub-question alone."""
    reply = await _ask(llm, _failure_prompt(q, ()))
    text = _clean_reply(reply) if reply is not None else ""
    answer = (symbols.lookup(text) or symbols.intern(text)) if text else None
    return RetrievalOutcome(answer, Layer.BASE, Stage.FAILURE)
