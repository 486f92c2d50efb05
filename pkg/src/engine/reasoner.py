"""
Multi-hop reasoning: decompose a question into sub-questions, then walk the
hop chain where each hop's answer becomes the next hop's subject.
"""
import hashlib
import logging
import re
from dataclasses import dataclass, field

from engine.retrieval import SubQuestion, answer_directly, answer_subquestion
from utils.errors import DecompositionParseError, ParseError, ScriptMiss
from utils.helpers import PREV_PLACEHOLDER, cosine, fold_text, normalize_text
from utils.storage import read_jsonl

_NUMBERED = re.compile(r"^\s*(?:Q\s*)?(\d+)\s*[.):]\s*(.+?)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class Decomposition:
    question: str
    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise DecompositionParseError(f"no sub-questions for: {self.question!r}")
        if PREV_PLACEHOLDER in self.steps[0]:
            raise DecompositionParseError(f"first sub-question cannot use {PREV_PLACEHOLDER}: {self.steps[0]!r}")

    @classmethod
    def identity(cls, question):
        return cls(question, (question,))


@dataclass(frozen=True)
class Demo:
    question: str
    steps: tuple


@dataclass(frozen=True)
class HopTrace:
    hop: int
    sub_question: str
    outcome: object
    carried_entity: object = None

    def to_dict(self):
        return {
            "hop": self.hop,
            "sub_question": self.sub_question,
            "carried_entity": self.carried_entity.text if self.carried_entity is not None else None,
            **self.outcome.to_dict(),
        }


@dataclass(frozen=True)
class CaseAnswer:
    final_answer: object                # Symbol, or None when unanswered
    hops: tuple = field(default_factory=tuple)
    question: str = ""

    @property
    def answered(self):
        return self.final_answer is not None

    def to_dict(self):
        return {
            "question": self.question,
            "final_answer": self.final_answer.text if self.final_answer is not None else None,
            "hops": [h.to_dict() for h in self.hops],
        }


def question_key(question):
    """Stable key used to look up scripted decompositions."""
    return hashlib.sha1(fold_text(question).encode("utf-8")).hexdigest()


def load_demos(path):
    """Demo pool JSONL: {"question", "steps": [...]}."""
    demos = []
    for line_no, row in read_jsonl(path):
        if not isinstance(row, dict) or "question" not in row or not isinstance(row.get("steps"), list):
            raise ParseError("demo needs question and steps list", line=line_no, path=path)
        demos.append(Demo(str(row["question"]), tuple(str(s) for s in row["steps"])))
    return demos


def parse_steps(reply):
    """Numbered lines ('1. ...', '2) ...') from an LLM reply, in order."""
    steps = []
    for line in (reply or "").splitlines():
        match = _NUMBERED.match(line)
        if match:
            steps.append(normalize_text(match.group(2)))
    if not steps:
        raise DecompositionParseError(f"no numbered sub-questions in reply: {(reply or '')[:80]!r}")
    return tuple(steps)


def build_prompt(question, demos):
    """Few-shot decomposition prompt."""
    blocks = [
        "Break the question into simple sub-questions, one fact each. "
        f"Refer to the previous sub-question's answer as {PREV_PLACEHOLDER}."
    ]
    for demo in demos:
        numbered = "\n".join(f"{i}. {step}" for i, step in enumerate(demo.steps, start=1))
        blocks.append(f"Question: {demo.question}\nSub-questions:\n{numbered}")
    blocks.append(f"Question: {question}\nSub-questions:")
    return "\n\n".join(blocks)


async def select_demos(question, demos, embedder, k):
    """k most similar demos by cosine over embedder vectors (stable on ties)."""
    query = await embedder.embed(question)
    scored = []
    for index, demo in enumerate(demos):
        similarity = cosine(query, await embedder.embed(demo.question))
        scored.append((similarity, index, demo))
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [demo for _, _, demo in scored[:k]]


class Decomposer:
    """
    Scripted decompositions first (keyed by question hash), then few-shot
    decomposition through the LLM when a demo pool and oracles are set,
    otherwise the identity decomposition.
    """

    def __init__(self, scripts=None, demos=(), embedder=None, llm=None, k=4):
        self._scripts = {}
        for question, steps in (scripts or {}).items():
            self.add_script(question, steps)
        self.demos = list(demos)
        self.embedder = embedder
        self.llm = llm
        self.k = k

    def add_script(self, question, steps):
        self._scripts[question_key(question)] = Decomposition(question, tuple(steps))

    async def decompose(self, question):
        scripted = self._scripts.get(question_key(question))
        if scripted is not None:
            return scripted
        if self.demos and self.llm is not None and self.embedder is not None:
            try:
                return await decompose(question, self.demos, self.embedder, self.llm, self.k)
            except ScriptMiss as e:
                logging.warning(f"⚠️ No decomposition for {question!r}, answering it as one hop: {e}")
        return Decomposition.identity(question)


async def decompose(question, demos, embed, llm, k=4):
    """Few-shot decomposition with the k most similar demos."""
    chosen = await select_demos(question, demos, embed, k)
    reply = await llm.complete(build_prompt(question, chosen))
    return Decomposition(question, parse_steps(reply))


def instantiate(template, previous):
    if previous is None:
        return template
    return template.replace(PREV_PLACEHOLDER, previous.text)


async def run_chain(decomp, view, surface, oracles, cfg, symbols, max_hops=None, direct=False):
    """
    Answer each step in order, feeding hop i's answer into step i+1.
    The first unanswered hop ends the chain with no final answer.
    With direct=True every hop goes straight to the LLM (retrieval ablation).
    """
    hops = []
    previous = None
    steps = decomp.steps if max_hops is None else decomp.steps[:max_hops]
    for i, template in enumerate(steps):
        text = instantiate(template, previous)
        q = SubQuestion(text=text, position=i, subject_hint=previous)
        if direct:
            outcome = await answer_directly(q, oracles.llm, symbols)
        else:
            outcome = await answer_subquestion(q, view, surface, oracles, cfg, symbols)
        hops.append(HopTrace(i, text, outcome, outcome.answer))
        if outcome.answer is None:
            logging.debug(f"⛔ [{view.case_id}] hop {i} unanswered: {text!r}")
            return CaseAnswer(None, tuple(hops), decomp.question)
        previous = outcome.answer
    return CaseAnswer(previous, tuple(hops), decomp.question)
