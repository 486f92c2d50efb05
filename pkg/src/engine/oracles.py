"""
Oracle adapters: the learned components behind call/response interfaces.

DetectorOracle scores entity/relation candidates, EmbedderOracle returns
similarity vectors, LLMOracle completes prompts. Every call, mock or live,
is appended to a shared audit Transcript.
"""
import asyncio
import logging
import time
from dataclasses import dataclass, field
from threading import Lock
from typing import Protocol

import aiohttp
import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

try:
    import google.generativeai as genai
except ImportError:
    genai = None  # type: ignore

from utils.errors import OracleUnavailable, ParseError, ScriptMiss
from utils.helpers import relation_phrase, tokenize, window_jaccard
from utils.storage import read_jsonl, write_jsonl


@dataclass(frozen=True)
class Candidate:
    """An entity candidate with detector score g in [0, 1]."""
    entity: object
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"candidate score out of range: {self.score}")


@dataclass(frozen=True)
class OracleRequest:
    kind: str                   # Detect | Embed | Complete
    payload: str
    context: str | None = None


@dataclass(frozen=True)
class OracleResponse:
    payload: object
    latency: float
    token_counts: dict | None = None


class Transcript:
    """Append-only audit log of oracle calls. Appends are serialized."""

    def __init__(self):
        self._entries = []
        self._lock = Lock()

    def record(self, role, request, response, **extra):
        entry = {
            "role": role,
            "kind": request.kind,
            "prompt_or_query": request.payload,
            "response": response.payload if isinstance(response, OracleResponse) else response,
            "latency": round(response.latency, 6) if isinstance(response, OracleResponse) else None,
        }
        if request.context is not None:
            entry["context"] = request.context
        if isinstance(response, OracleResponse) and response.token_counts:
            entry["token_counts"] = response.token_counts
        entry.update(extra)
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self):
        with self._lock:
            return list(self._entries)

    def prompts(self, kind="Complete"):
        return [e["prompt_or_query"] for e in self.entries if e["kind"] == kind]

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def dump(self, path):
        """Write the transcript as JSONL, stripping timing so dumps are reproducible."""
        rows = [{k: v for k, v in e.items() if k != "latency"} for e in self.entries]
        return write_jsonl(path, rows)


class DetectorOracle(Protocol):
    async def detect_entities(self, query: str) -> list: ...

    async def detect_relation(self, query: str): ...


class EmbedderOracle(Protocol):
    async def embed(self, text: str) -> np.ndarray: ...


class LLMOracle(Protocol):
    async def complete(self, prompt: str, context: str | None = None) -> str: ...


# ============================================================================
# Mock oracles
# ============================================================================

class LexiconDetector:
    """
    Stand-in for trained entity/relation detectors: token Jaccard between a
    query and each lexicon entry, taken over the best query window of the
    entry's length. Scripted queries return fixture scores verbatim.
    """

    role = "detector"

    def __init__(self, symbols, entities=(), relations=None, transcript=None):
        self.symbols = symbols
        self.transcript = transcript if transcript is not None else Transcript()
        self._entities = []
        self._entity_ids = set()
        self._relations = []
        self._relation_keys = set()
        self._scripted = {}
        for entity in entities:
            self.add_entity(entity)
        for relation, phrases in (relations or {}).items():
            self.add_relation(relation, phrases)

    @classmethod
    def from_store(cls, store, transcript=None, extra_entities=()):
        """Lexicon of every entity and relation in the base graph and the overlays."""
        entities = dict.fromkeys(store.base.entities())
        relations = dict.fromkeys(store.base.relations())
        for case_id in store.case_ids():
            for s, r, o in store.overlay(case_id).items():
                entities.setdefault(s, None)
                entities.setdefault(o, None)
                relations.setdefault(r, None)
        for text in extra_entities:
            entities.setdefault(store.intern(text), None)
        return cls(store.symbols, entities, {r: () for r in relations}, transcript)

    def add_overlays(self, store):
        """Extend the lexicon with everything the store's overlays mention."""
        for case_id in store.case_ids():
            for s, r, o in store.overlay(case_id).items():
                self.add_entity(s)
                self.add_entity(o)
                self.add_relation(r)

    def add_entity(self, entity):
        symbol = entity if hasattr(entity, "id") else self.symbols.intern(entity)
        tokens = tokenize(symbol.text)
        if tokens and symbol.id not in self._entity_ids:
            self._entity_ids.add(symbol.id)
            self._entities.append((symbol, tokens))
        return symbol

    def add_relation(self, relation, phrases=()):
        symbol = relation if hasattr(relation, "id") else self.symbols.intern(relation)
        surfaces = [relation_phrase(symbol.text), *phrases]
        for phrase in surfaces:
            tokens = tokenize(phrase)
            key = (symbol.id, tuple(tokens))
            if tokens and key not in self._relation_keys:
                self._relation_keys.add(key)
                self._relations.append((symbol, tokens))
        return symbol

    def script(self, query, candidates):
        """Fix the exact entity scores returned for one query: [(text, score), ...]."""
        self._scripted[query] = [(self.symbols.intern(text), float(score)) for text, score in candidates]

    async def detect_entities(self, query):
        started = time.perf_counter()
        if query in self._scripted:
            scored = [Candidate(e, s) for e, s in self._scripted[query]]
        else:
            q_tokens = tokenize(query)
            scored = []
            for symbol, tokens in self._entities:
                score = window_jaccard(q_tokens, tokens)
                if score > 0.0:
                    scored.append(Candidate(symbol, score))
            scored.sort(key=lambda c: -c.score)
        self.transcript.record(
            self.role,
            OracleRequest("Detect", query),
            OracleResponse([[c.entity.text, c.score] for c in scored], time.perf_counter() - started),
            target="entities",
        )
        return scored

    async def detect_relation(self, query):
        """Best relation and its score, or None if nothing overlaps."""
        started = time.perf_counter()
        q_tokens = tokenize(query)
        best, best_score = None, 0.0
        for symbol, tokens in self._relations:
            score = window_jaccard(q_tokens, tokens)
            if score > best_score:
                best, best_score = symbol, score
        result = (best, best_score) if best is not None else None
        self.transcript.record(
            self.role,
            OracleRequest("Detect", query),
            OracleResponse([best.text, best_score] if best else None, time.perf_counter() - started),
            target="relation",
        )
        return result


class HashingEmbedder:
    """L2-normalized term-frequency vectors over a fixed hashed vocabulary."""

    role = "embedder"

    def __init__(self, dim=1 << 16, transcript=None):
        self.dim = dim
        self.transcript = transcript if transcript is not None else Transcript()
        # Stateless, so no fit step; tokens match the detector's
        self._vectorizer = HashingVectorizer(
            n_features=dim, analyzer=tokenize, alternate_sign=False, norm="l2",
        )

    def vectorize(self, text):
        return self._vectorizer.transform([text]).toarray()[0]

    async def embed(self, text):
        started = time.perf_counter()
        vec = self.vectorize(text)
        self.transcript.record(
            self.role,
            OracleRequest("Embed", text),
            OracleResponse(int(np.count_nonzero(vec)), time.perf_counter() - started),
        )
        return vec


class ScriptedLLM:
    """Scripted completions: the longest registered pattern found in the prompt wins."""

    role = "llm"

    def __init__(self, scripts=None, transcript=None):
        self.transcript = transcript if transcript is not None else Transcript()
        self._scripts = {}
        for match, response in (scripts or {}).items():
            self.add(match, response)

    def add(self, match, response):
        if not match:
            raise ValueError("script pattern must be non-empty")
        self._scripts[match] = response

    def __len__(self):
        return len(self._scripts)

    async def complete(self, prompt, context=None):
        started = time.perf_counter()
        hits = [m for m in self._scripts if m in prompt]
        if not hits:
            self.transcript.record(
                self.role, OracleRequest("Complete", prompt, context),
                OracleResponse(None, time.perf_counter() - started), miss=True,
            )
            raise ScriptMiss(f"no script matches prompt: {prompt[:80]!r}")
        # Longest pattern first; ties broken by registration order
        best = max(hits, key=len)
        response = self._scripts[best]
        self.transcript.record(
            self.role, OracleRequest("Complete", prompt, context),
            OracleResponse(response, time.perf_counter() - started), match=best,
        )
        return response


# ============================================================================
# Live oracles
# ============================================================================

class ChatCompletionLLM:
    """
    Client for any chat-completion compatible HTTP endpoint.
    Posts {model, messages, temperature=0} with a bearer token; bounded
    concurrency through a semaphore.
    """

    role = "llm"

    def __init__(self, base_url, model, api_key=None, max_inflight=4, timeout=60.0, transcript=None):
        if not base_url or not model:
            raise OracleUnavailable("CAPEKG_LLM_BASE_URL and CAPEKG_LLM_MODEL must be set for live mode")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key
        self.timeout = aiohttp.ClientTimeout(total=timeout)
        self.transcript = transcript if transcript is not None else Transcript()
        self._max_inflight = max_inflight
        self._semaphore = None

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _failed(self, request, started, message):
        """Log and record a failed call, then hand back the error to raise."""
        logging.error(f"❌ {message}")
        self.transcript.record(
            self.role, request, OracleResponse(None, time.perf_counter() - started),
            model=self.model, temperature=0, error=message,
        )
        return OracleUnavailable(message)

    async def complete(self, prompt, context=None):
        # Semaphore is bound to the running loop, so create it lazily
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self._max_inflight)
        request = OracleRequest("Complete", prompt, context)
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        started = time.perf_counter()
        async with self._semaphore:
            try:
                async with aiohttp.ClientSession(timeout=self.timeout) as session:
                    async with session.post(self.url, json=body, headers=self._headers()) as response:
                        if response.status != 200:
                            detail = (await response.text())[:200]
                            raise self._failed(request, started, f"LLM endpoint returned HTTP {response.status}: {detail}")
                        data = await response.json()
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                raise self._failed(request, started, f"LLM endpoint unreachable: {e}") from e

        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise self._failed(request, started, f"malformed chat-completion response: {str(data)[:200]}") from e

        self.transcript.record(
            self.role, request,
            OracleResponse(text.strip(), time.perf_counter() - started, data.get("usage")),
            model=self.model, temperature=body["temperature"],
        )
        return text.strip()


class GeminiLLM:
    """Google Gemini completions, run in the default executor with temperature 0."""

    role = "llm"

    def __init__(self, api_key, model="models/gemini-2.0-flash", transcript=None):
        if genai is None:
            raise OracleUnavailable("google-generativeai is not installed")
        if not api_key:
            raise OracleUnavailable("GEMINI_API_KEY must be set for the gemini provider")
        genai.configure(api_key=api_key)  # type: ignore
        self.model_name = model
        self._model = genai.GenerativeModel(model)  # type: ignore
        self.transcript = transcript if transcript is not None else Transcript()

    async def complete(self, prompt, context=None):
        request = OracleRequest("Complete", prompt, context)
        started = time.perf_counter()
        try:
            response = await asyncio.get_running_loop().run_in_executor(
                None, lambda: self._model.generate_content(prompt, generation_config={"temperature": 0})
            )
            text = (response.text or "").strip()
        except Exception as e:
            logging.error(f"⚠️ Gemini model {self.model_name} failed: {e}")
            self.transcript.record(
                self.role, request, OracleResponse(None, time.perf_counter() - started),
                model=self.model_name, temperature=0, error=str(e),
            )
            raise OracleUnavailable(f"gemini request failed: {e}") from e

        self.transcript.record(
            self.role, request,
            OracleResponse(text, time.perf_counter() - started),
            model=self.model_name, temperature=0,
        )
        return text



# ============================================================================
# Wiring
# ============================================================================

@dataclass
class OracleSuite:
    detector: object
    llm: object
    embedder: object = None
    transcript: Transcript = field(default_factory=Transcript)


def build_live_llm(settings, transcript):
    """LLM client for the configured provider."""
    if settings.provider == "gemini":
        return GeminiLLM(settings.gemini_api_key, model=settings.model or "models/gemini-2.0-flash",
                         transcript=transcript)
    return ChatCompletionLLM(
        settings.base_url, settings.model, api_key=settings.api_key,
        max_inflight=settings.max_inflight, timeout=settings.timeout, transcript=transcript,
    )


@dataclass
class MockFixtures:
    """Contents of a mock fixtures JSONL file."""
    scripts: dict = field(default_factory=dict)
    detections: dict = field(default_factory=dict)
    decompositions: dict = field(default_factory=dict)
    relation_phrases: dict = field(default_factory=dict)
    entities: list = field(default_factory=list)


def load_fixtures(path):
    """
    Read a fixtures file. Each line is one of:
      {"match", "response"}              scripted LLM reply
      {"query", "candidates": [{"entity", "score"}]}  scripted detector scores
      {"question", "steps"}              scripted decomposition
      {"relation", "phrases"}            extra surface phrases for a relation
      {"entity"}                         extra lexicon entity
    """
    fixtures = MockFixtures()
    for line_no, row in read_jsonl(path):
        if not isinstance(row, dict):
            raise ParseError("fixture line must be an object", line=line_no, path=path)
        if "match" in row and "response" in row:
            fixtures.scripts[str(row["match"])] = str(row["response"])
        elif "query" in row and "candidates" in row:
            try:
                candidates = [(c["entity"], float(c["score"])) for c in row["candidates"]]
            except (KeyError, TypeError, ValueError):
                raise ParseError("candidates need entity and numeric score", line=line_no, path=path) from None
            for entity, score in candidates:
                if not 0.0 <= score <= 1.0:
                    raise ParseError(f"score for '{entity}' must be in [0, 1], got {score}", line=line_no, path=path)
            fixtures.detections[row["query"]] = candidates
        elif "question" in row and "steps" in row:
            if not isinstance(row["steps"], list):
                raise ParseError("steps must be a list", line=line_no, path=path)
            fixtures.decompositions[row["question"]] = [str(s) for s in row["steps"]]
        elif "relation" in row:
            fixtures.relation_phrases[row["relation"]] = [str(p) for p in row.get("phrases", [])]
        elif "entity" in row:
            fixtures.entities.append(str(row["entity"]))
        else:
            raise ParseError(f"unrecognized fixture keys {sorted(row)}", line=line_no, path=path)
    return fixtures


def build_oracles(store, fixtures=None, settings=None, live=False):
    """
    Mock detector and embedder always; scripted LLM unless live mode asks
    for the configured endpoint.
    """
    fixtures = fixtures or MockFixtures()
    transcript = Transcript()
    detector = LexiconDetector.from_store(store, transcript=transcript, extra_entities=fixtures.entities)
    for relation, phrases in fixtures.relation_phrases.items():
        detector.add_relation(relation, phrases)
    for query, candidates in fixtures.detections.items():
        detector.script(query, candidates)

    if live:
        llm = build_live_llm(settings, transcript)
        logging.info(f"🌐 Using live LLM provider '{settings.provider}'")
    else:
        llm = ScriptedLLM(fixtures.scripts, transcript=transcript)
    return OracleSuite(detector=detector, llm=llm, embedder=HashingEmbedder(transcript=transcript),
                       transcript=transcript)
