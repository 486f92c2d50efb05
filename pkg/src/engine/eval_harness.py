"""
MQuAKE-format evaluation: ingest cases, build the base graph from their
unedited facts, register each batch's edits, answer every case through the
reasoner and compute M-Acc (final answer) and H-Acc (hop chain).
"""
import asyncio
import logging
import random
import time
from dataclasses import asdict, dataclass, field

import psutil

from engine.edit_engine import Edit, apply_edit, check_surface, surface_of
from engine.layered_kg import BaseGraph, Layer, LayeredStore, LayeredView, SymbolTable, build_base
from engine.oracles import HashingEmbedder, LexiconDetector, OracleSuite, ScriptedLLM, Transcript
from engine.reasoner import Decomposer, run_chain
from engine.retrieval import Stage
from utils.config import AppConfig, parse_batch
from utils.errors import OracleUnavailable, SchemaError
from utils.helpers import PREV_PLACEHOLDER, answers_match, fold_text, normalize_text, relation_phrase
from utils.storage import jsonl_writer, read_json


@dataclass(frozen=True)
class Rewrite:
    subject: str
    relation: str
    target_true: str | None
    target_new: str


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    rewrites: tuple
    questions: tuple
    new_answer: str
    new_answer_aliases: tuple = ()
    gold_new_chain: tuple = ()          # ((s, r, o'), ...) as strings
    orig_facts: tuple = ()              # unedited facts for the base graph


@dataclass(frozen=True)
class BatchSetting:
    k: int | None = 1                   # None = all cases in one batch

    @classmethod
    def parse(cls, value):
        return cls(parse_batch(value))

    @property
    def label(self):
        return "all" if self.k is None else str(self.k)


@dataclass(frozen=True)
class AblationFlags:
    disable_construction: bool = False
    disable_retrieval: bool = False
    disable_update: bool = False

    @classmethod
    def from_names(cls, names):
        names = set(names or ())
        return cls(
            disable_construction="construction" in names,
            disable_retrieval="retrieval" in names,
            disable_update="update" in names,
        )

    @property
    def names(self):
        return [n for n, on in (("construction", self.disable_construction),
                                ("retrieval", self.disable_retrieval),
                                ("update", self.disable_update)) if on]


@dataclass(frozen=True)
class CaseScore:
    case_id: str
    m_hit: bool
    h_hit: bool
    run_index: int | None = None


@dataclass
class MetricsReport:
    m_acc: float
    h_acc: float
    n_cases: int
    m_hits: int
    h_hits: int
    setting: str
    flags: list
    per_batch: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)
    layers: dict = field(default_factory=dict)
    traces_path: str | None = None
    complete: bool = True
    errors: int = 0
    wall_time: float = 0.0
    peak_rss_mb: float = 0.0

    def to_dict(self, include_runtime=False):
        data = asdict(self)
        if not include_runtime:
            data.pop("wall_time")
            data.pop("peak_rss_mb")
        return data


# ============================================================================
# Ingestion
# ============================================================================

def _label(value):
    """MQuAKE stores targets as {"str": ..., "id": ...}; plain strings are accepted too."""
    if isinstance(value, dict):
        value = value.get("str")
    return normalize_text(value) if value is not None else None


def _require(record, key, index):
    if key not in record or record[key] in (None, "", []):
        raise SchemaError(f"missing field '{key}'", index=index, field=key)
    return record[key]


def _triples(rows, index, key):
    out = []
    for row in rows or ():
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            raise SchemaError(f"'{key}' entries must be [s, r, o]", index=index, field=key)
        out.append(tuple(normalize_text(x) for x in row))
    return tuple(out)


def _rewrite_relation(rw, i, edit_labels, chain, index):
    relation = rw.get("relation")
    if relation is None and i < len(edit_labels):
        relation = edit_labels[i][1]
    if relation is None:
        # Raw records carry only a relation id; take the label from the labeled chain hop it rewrites.
        subject, target = fold_text(normalize_text(rw["subject"])), _label(rw["target_new"])
        for s, r, o in chain:
            if fold_text(s) == subject and target is not None and fold_text(o) == fold_text(target):
                relation = r
                break
    if not relation:
        raise SchemaError(
            f"rewrite of '{rw['subject']}' has no relation label (relation_id {rw.get('relation_id')!r})",
            index=index, field="requested_rewrite",
        )
    return relation


def _parse_case(record, index):
    if not isinstance(record, dict):
        raise SchemaError("record must be an object", index=index)
    orig = record.get("orig") or {}

    chain_raw = orig.get("new_triples_labeled") or record.get("new_triples_labeled") or record.get("new_triples")
    if not chain_raw:
        raise SchemaError("missing field 'new_triples'", index=index, field="new_triples")
    chain = _triples(chain_raw, index, "new_triples")
    for (_, _, o), (s, _, _) in zip(chain, chain[1:]):
        if fold_text(o) != fold_text(s):
            raise SchemaError("gold chain breaks s_{i+1} = o_i", index=index, field="new_triples")

    rewrites_raw = _require(record, "requested_rewrite", index)
    edit_labels = orig.get("edit_triples_labeled") or []
    rewrites = []
    for i, rw in enumerate(rewrites_raw):
        if not isinstance(rw, dict) or "subject" not in rw or "target_new" not in rw:
            raise SchemaError("rewrite needs subject and target_new", index=index, field="requested_rewrite")
        rewrites.append(Rewrite(
            subject=normalize_text(rw["subject"]),
            relation=normalize_text(_rewrite_relation(rw, i, edit_labels, chain, index)),
            target_true=_label(rw.get("target_true")),
            target_new=_label(rw["target_new"]),
        ))

    questions = _require(record, "questions", index)
    if not isinstance(questions, list):
        raise SchemaError("'questions' must be a list", index=index, field="questions")

    facts_raw = orig.get("triples_labeled") or record.get("triples_labeled") or record.get("triples")
    aliases = record.get("new_answer_alias") or record.get("new_answer_aliases") or []

    return CaseRecord(
        case_id=str(record.get("case_id", index + 1)),
        rewrites=tuple(rewrites),
        questions=tuple(normalize_text(q) for q in questions),
        new_answer=normalize_text(_require(record, "new_answer", index)),
        new_answer_aliases=tuple(normalize_text(a) for a in aliases),
        gold_new_chain=chain,
        orig_facts=_triples(facts_raw, index, "triples_labeled"),
    )


def ingest(data):
    """Parse MQuAKE records (a JSON array, or a path to one) into CaseRecords."""
    if isinstance(data, str):
        try:
            data = read_json(data)
        except Exception as e:
            raise SchemaError(f"cannot load dataset {data}: {e}") from e
    if not isinstance(data, list):
        raise SchemaError("dataset must be a JSON array of records")
    cases = [_parse_case(record, index) for index, record in enumerate(data)]
    logging.info(f"📚 Ingested {len(cases)} cases")
    return cases


# ============================================================================
# Scoring
# ============================================================================

def _hops_match(hops, chain):
    if len(hops) != len(chain):
        return False
    for hop, (_, _, gold) in zip(hops, chain):
        if hop.carried_entity is None or fold_text(hop.carried_entity.text) != fold_text(gold):
            return False
    return True


def score_case(answer, record):
    """
    m_hit: some run's final answer equals new_answer or an alias.
    h_hit: the hops of the hitting run (else the first run) match the gold
    chain's objects in order and count.
    """
    runs = [answer] if hasattr(answer, "final_answer") else list(answer)
    golds = (record.new_answer, *record.new_answer_aliases)
    hit = next(
        (i for i, run in enumerate(runs)
         if run.final_answer is not None and answers_match(run.final_answer.text, golds)),
        None,
    )
    scored = runs[hit if hit is not None else 0] if runs else None
    h_hit = scored is not None and _hops_match(scored.hops, record.gold_new_chain)
    return CaseScore(record.case_id, hit is not None, h_hit, hit)


# ============================================================================
# Running
# ============================================================================

def template_steps(record):
    """Sub-question templates built from the gold chain's relations (oracle-free decomposition)."""
    steps = []
    for i, (s, r, _) in enumerate(record.gold_new_chain):
        subject = s if i == 0 else PREV_PLACEHOLDER
        steps.append(f"What is the {relation_phrase(r)} of {subject}?")
    return steps


def template_decomposer(cases, base=None):
    """Decomposer scripted with template steps for every paraphrase of every case."""
    decomposer = base if base is not None else Decomposer()
    for record in cases:
        steps = template_steps(record)
        for question in record.questions:
            decomposer.add_script(question, steps)
    return decomposer


def batches(cases, setting, shuffle_seed=None):
    """Contiguous groups of k cases (last may be smaller); optional seeded shuffle first."""
    cases = list(cases)
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(cases)
    if not cases:
        return []
    size = setting.k or len(cases)
    return [cases[i:i + size] for i in range(0, len(cases), size)]


def build_eval_store(cases, facts=(), symbols=None):
    """Base graph from every case's unedited facts plus any external facts."""
    symbols = symbols if symbols is not None else SymbolTable()
    records = [{"s": s, "r": r, "o": o} for case in cases for s, r, o in case.orig_facts]
    records.extend(facts)
    return LayeredStore(build_base(records, symbols), symbols)


def eval_oracles(store, cases, llm=None, transcript=None):
    """Mock detector over every entity the cases can mention; scripted LLM unless given one."""
    transcript = transcript if transcript is not None else Transcript()
    detector = LexiconDetector.from_store(store, transcript=transcript)
    for case in cases:
        for rw in case.rewrites:
            detector.add_entity(rw.subject)
            detector.add_entity(rw.target_new)
            detector.add_relation(rw.relation)
        for s, r, o in case.gold_new_chain:
            detector.add_entity(s)
            detector.add_entity(o)
            detector.add_relation(r)
    if llm is None:
        llm = ScriptedLLM(transcript=transcript)
    return OracleSuite(detector=detector, llm=llm, embedder=HashingEmbedder(transcript=transcript),
                       transcript=transcript)


def _edits_for(record, symbols, case_id):
    return [
        Edit(
            case_id=case_id,
            s=symbols.intern(rw.subject),
            r=symbols.intern(rw.relation),
            o_new=symbols.intern(rw.target_new),
            o_true=symbols.intern(rw.target_true) if rw.target_true else None,
        )
        for rw in record.rewrites
    ]


def _register_batch(session, batch, flags, batch_no):
    """Apply the batch's edits; returns {case_id: overlay} for answering."""
    shared = flags.disable_update or flags.disable_construction
    overlays = {}
    if shared:
        overlay = session.create_overlay(f"batch-{batch_no}")
        for record in batch:
            for edit in _edits_for(record, session.symbols, overlay.case_id):
                apply_edit(overlay, edit)
            overlays[record.case_id] = overlay
    else:
        for record in batch:
            overlay = session.create_overlay(record.case_id)
            for edit in _edits_for(record, session.symbols, record.case_id):
                apply_edit(overlay, edit)
            overlays[record.case_id] = overlay

    for overlay in {id(o): o for o in overlays.values()}.values():
        if not check_surface(overlay):
            raise RuntimeError(f"impact surface of '{overlay.case_id}' does not match its edit log")
    return overlays


async def run_eval(cases, setting, flags, cfg=None, oracles=None, *, store=None, facts=(),
                   decomposer=None, jobs=None, traces_path=None, shuffle_seed=None, fail_fast=True):
    """
    Evaluate every case under a batch setting and ablation flags.
    Cases inside a batch are answered concurrently (bounded by `jobs`)
    once all of the batch's edits are registered.
    """
    cfg = cfg if cfg is not None else AppConfig()
    started = time.perf_counter()
    store = store if store is not None else build_eval_store(cases, facts)
    oracles = oracles if oracles is not None else eval_oracles(store, cases)
    decomposer = decomposer if decomposer is not None else template_decomposer(cases)
    jobs = jobs or cfg.eval.jobs
    semaphore = asyncio.Semaphore(jobs)
    empty_base = BaseGraph().seal()

    async def evaluate(record, view):
        async with semaphore:
            surface = surface_of(view.overlay)
            runs = []
            golds = (record.new_answer, *record.new_answer_aliases)
            for question in record.questions:
                decomp = await decomposer.decompose(question)
                answer = await run_chain(
                    decomp, view, surface, oracles, cfg.retrieval, store.symbols,
                    max_hops=cfg.reasoner.max_hops, direct=flags.disable_retrieval,
                )
                runs.append(answer)
                if answer.final_answer is not None and answers_match(answer.final_answer.text, golds):
                    break
            return runs

    async def evaluate_safely(record, view):
        try:
            return await evaluate(record, view)
        except OracleUnavailable as e:
            if fail_fast:
                raise
            logging.error(f"❌ Case {record.case_id} aborted: {e}")
            return None

    scores, per_batch, trace_rows = [], [], []
    stages = {s.value: 0 for s in Stage}
    layers = {l.value: 0 for l in Layer}
    errors = 0

    for batch_no, batch in enumerate(batches(cases, setting, shuffle_seed)):
        session = store.fresh_session(base=empty_base if flags.disable_construction else None)
        overlays = _register_batch(session, batch, flags, batch_no)
        results = await asyncio.gather(*(
            evaluate_safely(record, LayeredView(session.base, overlays[record.case_id]))
            for record in batch
        ))

        m_batch = h_batch = 0
        for record, runs in zip(batch, results):
            if runs is None:
                errors += 1
                scores.append(CaseScore(record.case_id, False, False))
                continue
            score = score_case(runs, record)
            scores.append(score)
            m_batch += score.m_hit
            h_batch += score.h_hit
            for run in runs:
                for hop in run.hops:
                    stages[hop.outcome.stage.value] += 1
                    layers[hop.outcome.layer.value] += 1
            trace_rows.append({
                "case_id": record.case_id,
                "batch": batch_no,
                "m_hit": score.m_hit,
                "h_hit": score.h_hit,
                "runs": [run.to_dict() for run in runs],
            })
        per_batch.append({"batch": batch_no, "n_cases": len(batch), "m_hits": m_batch, "h_hits": h_batch})
        logging.info(f"📊 Batch {batch_no}: {m_batch}/{len(batch)} M, {h_batch}/{len(batch)} H")

    if traces_path:
        with jsonl_writer(traces_path) as write:
            for row in trace_rows:
                write(row)

    n = len(scores)
    m_hits = sum(s.m_hit for s in scores)
    h_hits = sum(s.h_hit for s in scores)
    report = MetricsReport(
        m_acc=m_hits / n if n else 0.0,
        h_acc=h_hits / n if n else 0.0,
        n_cases=n,
        m_hits=m_hits,
        h_hits=h_hits,
        setting=setting.label,
        flags=flags.names,
        per_batch=per_batch,
        stages=stages,
        layers=layers,
        traces_path=traces_path,
        complete=errors == 0,
        errors=errors,
        wall_time=round(time.perf_counter() - started, 3),
        peak_rss_mb=round(psutil.Process().memory_info().rss / 1024 / 1024, 2),
    )
    logging.info(f"✅ M-Acc {report.m_acc:.4f}  H-Acc {report.h_acc:.4f} over {n} cases")
    return report


# ============================================================================
# Synthetic suite
# ============================================================================

_SYLLABLES = [
    "ka", "lo", "mi", "ran", "te", "vu", "zor", "pel", "dax", "quin",
    "bri", "sol", "nev", "tor", "gal", "hix", "jun", "wen", "yar", "fet",
]

SYNTHETIC_RELATIONS = [
    "genre", "origin_country", "capital", "head_of_state", "official_language",
    "continent", "founder", "headquarters_location", "sport", "employer",
]


def synthetic_name(index):
    """Deterministic single-token pseudo-word, unique per index."""
    parts = []
    for _ in range(3):
        index, digit = divmod(index, len(_SYLLABLES))
        parts.append(_SYLLABLES[digit])
    parts.append(str(index) if index else "")
    return "".join(parts).capitalize()


def _questions(a, r1, r2):
    p1, p2 = relation_phrase(r1), relation_phrase(r2)
    return (
        f"What is the {p2} of the {p1} of {a}?",
        f"Which {p2} belongs to the {p1} of {a}?",
        f"Name the {p2} for the {p1} of {a}.",
    )


def _record(case_id, facts, rewrites, chain, a, r1, r2):
    return {
        "case_id": case_id,
        "requested_rewrite": [
            {"subject": s, "relation": r, "target_true": {"str": o}, "target_new": {"str": n}}
            for s, r, o, n in rewrites
        ],
        "questions": list(_questions(a, r1, r2)),
        "new_answer": chain[-1][2],
        "new_answer_alias": [chain[-1][2].lower()],
        "orig": {"triples_labeled": [list(t) for t in facts], "new_triples_labeled": [list(t) for t in chain]},
    }


def make_synthetic_suite(n, seed=0):
    """
    n two-hop MQuAKE-style records. Pairs alternate between a conflict pair
    (two cases rewriting the same (s, r) to different objects at hop 2) and
    two independent cases with the rewrite at hop 1.
    """
    rng = random.Random(seed)
    names = iter(range(10_000))

    def entity():
        return synthetic_name(next(names))

    records = []
    case_no = 0
    pair = 0
    while len(records) < n:
        r1, r2 = rng.sample(SYNTHETIC_RELATIONS, 2)
        if pair % 2 == 0:
            b, c = entity(), entity()
            for _ in range(2):
                if len(records) >= n:
                    break
                case_no += 1
                a, d = entity(), entity()
                facts = [(a, r1, b), (b, r2, c)]
                chain = [(a, r1, b), (b, r2, d)]
                records.append(_record(case_no, facts, [(b, r2, c, d)], chain, a, r1, r2))
        else:
            for _ in range(2):
                if len(records) >= n:
                    break
                case_no += 1
                a, b, c, x, y = (entity() for _ in range(5))
                facts = [(a, r1, b), (b, r2, c), (x, r2, y)]
                chain = [(a, r1, x), (x, r2, y)]
                records.append(_record(case_no, facts, [(a, r1, b, x)], chain, a, r1, r2))
        pair += 1
    return records
