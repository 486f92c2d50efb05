"""
Layered knowledge graph: an immutable base graph of factual triples plus
per-case copy-on-write overlays holding only that case's edits.

A LayeredView binds the base to exactly one overlay, so resolution under a
view can never see another case's edits.
"""
import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from threading import Lock

from utils.errors import (
    BaseGraphSealed, DuplicateCase, EmptySymbol, ParseError, UnknownCase,
)
from utils.helpers import fold_text, normalize_text
from utils.storage import dumps, read_jsonl, write_jsonl


class Layer(str, Enum):
    BASE = "Base"
    OVERLAY = "Overlay"


@dataclass(frozen=True, order=True)
class Symbol:
    """Interned entity or relation name. Equal text <=> equal id."""
    id: int
    text: str

    def __str__(self):
        return self.text


@dataclass(frozen=True)
class Triple:
    s: Symbol
    r: Symbol
    o: Symbol

    def to_dict(self):
        return {"s": self.s.text, "r": self.r.text, "o": self.o.text}

    def __str__(self):
        return f"({self.s}, {self.r}, {self.o})"


@dataclass(frozen=True)
class Resolution:
    """Object found for an (s, r) key and the layer it came from."""
    object: Symbol
    provenance: Layer


class SymbolTable:
    """Bijective text <-> id interning with a case-insensitive lookup fallback."""

    def __init__(self):
        self._by_text = {}
        self._by_fold = {}
        self._symbols = []
        self._lock = Lock()

    def intern(self, text):
        """Return the stable Symbol for `text`, creating it on first use."""
        key = normalize_text(text)
        if not key:
            raise EmptySymbol(f"symbol is empty after normalization: {text!r}")
        symbol = self._by_text.get(key)
        if symbol is not None:
            return symbol
        with self._lock:
            symbol = self._by_text.get(key)
            if symbol is None:
                symbol = Symbol(len(self._symbols), key)
                self._symbols.append(symbol)
                self._by_text[key] = symbol
                self._by_fold.setdefault(key.casefold(), symbol)
        return symbol

    def lookup(self, text):
        """Existing Symbol for `text`: exact normalized match, then case-insensitive; else None."""
        key = normalize_text(text)
        if not key:
            return None
        symbol = self._by_text.get(key)
        if symbol is None:
            symbol = self._by_fold.get(fold_text(key))
        return symbol

    def __getitem__(self, symbol_id):
        return self._symbols[symbol_id]

    def __len__(self):
        return len(self._symbols)


class BaseGraph:
    """
    Factual triples with (s, r) and subject indices.
    Mutable only until seal(); after that every write raises BaseGraphSealed.
    """

    def __init__(self):
        self._triples = {}          # Triple -> None, insertion-ordered set
        self._sp_index = {}         # (s.id, r.id) -> list of objects
        self._subject_index = {}    # s.id -> list of (r, o)
        self._sealed = False

    @property
    def sealed(self):
        return self._sealed

    def add(self, triple):
        """Insert a triple; duplicates are ignored. Returns True if it was new."""
        if self._sealed:
            raise BaseGraphSealed("base graph is sealed")
        if triple in self._triples:
            return False
        self._triples[triple] = None
        self._sp_index.setdefault((triple.s.id, triple.r.id), []).append(triple.o)
        self._subject_index.setdefault(triple.s.id, []).append((triple.r, triple.o))
        return True

    def seal(self):
        """Freeze the graph. Index lists become tuples."""
        if not self._sealed:
            self._sp_index = {k: tuple(v) for k, v in self._sp_index.items()}
            self._subject_index = {k: tuple(v) for k, v in self._subject_index.items()}
            self._sealed = True
        return self

    def objects(self, s, r):
        """All base objects for (s, r) in insertion order."""
        return self._sp_index.get((s.id, r.id), ())

    @property
    def triples(self):
        return tuple(self._triples)

    def __len__(self):
        return len(self._triples)

    def __contains__(self, triple):
        return triple in self._triples

    def entities(self):
        seen = {}
        for t in self._triples:
            seen.setdefault(t.s, None)
            seen.setdefault(t.o, None)
        return list(seen)

    def relations(self):
        return list({t.r: None for t in self._triples})

    def check_indices(self):
        """Rebuild both indices from the triple set and compare."""
        sp, subj = {}, {}
        for t in self._triples:
            sp.setdefault((t.s.id, t.r.id), []).append(t.o)
            subj.setdefault(t.s.id, []).append((t.r, t.o))
        same_sp = {k: tuple(v) for k, v in sp.items()} == {k: tuple(v) for k, v in self._sp_index.items()}
        same_subj = {k: tuple(v) for k, v in subj.items()} == {k: tuple(v) for k, v in self._subject_index.items()}
        return same_sp and same_subj

    def serialize(self):
        """Canonical JSONL text of the graph."""
        return "".join(dumps(t.to_dict()) + "\n" for t in self._triples)

    def fingerprint(self):
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


class Overlay:
    """
    Copy-on-write edit container for one case. Holds only deltas:
    delta maps (s, r) to exactly one new object. The edit log and the
    subject/relation sets of the impact surface are kept alongside and
    are only written through edit_engine.apply_edit.
    """

    __slots__ = ("case_id", "_delta", "_log", "_subjects", "_relations", "_lock")

    def __init__(self, case_id):
        self.case_id = case_id
        self._delta = {}        # (s.id, r.id) -> (s, r, o_new)
        self._log = []
        self._subjects = {}
        self._relations = {}
        self._lock = Lock()

    def get(self, s, r):
        entry = self._delta.get((s.id, r.id))
        return entry[2] if entry is not None else None

    @property
    def delta(self):
        """Snapshot {(s, r): o_new}."""
        return {(s, r): o for s, r, o in self._delta.values()}

    @property
    def edits(self):
        return tuple(self._log)

    @property
    def last_seq(self):
        return self._log[-1].seq if self._log else 0

    def items(self):
        """Current (s, r, o_new) entries in first-edit order."""
        return list(self._delta.values())

    def __len__(self):
        return len(self._delta)

    def __repr__(self):
        return f"Overlay(case_id={self.case_id!r}, entries={len(self._delta)})"


@dataclass(frozen=True)
class LayeredView:
    """Read handle: the sealed base plus exactly one overlay."""
    base: BaseGraph
    overlay: Overlay

    @property
    def case_id(self):
        return self.overlay.case_id


def resolve(view, s, r, layer=Layer.OVERLAY):
    """
    Resolve (s, r) under a view. The case's edit wins; otherwise the first
    base object in insertion order; otherwise None (not found).
    With layer=Layer.BASE the overlay is not consulted.
    """
    if layer is Layer.OVERLAY:
        entry = view.overlay._delta.get((s.id, r.id))
        if entry is not None:
            return Resolution(entry[2], Layer.OVERLAY)
    objects = view.base._sp_index.get((s.id, r.id))
    if objects:
        return Resolution(objects[0], Layer.BASE)
    return None


def resolve_multi(view, s, r, layer=Layer.OVERLAY):
    """Like resolve, but every base object when no edit applies; an edit yields [o*] only."""
    if layer is Layer.OVERLAY:
        entry = view.overlay._delta.get((s.id, r.id))
        if entry is not None:
            return [Resolution(entry[2], Layer.OVERLAY)]
    return [Resolution(o, Layer.BASE) for o in view.base.objects(s, r)]


class LayeredStore:
    """
    Session state: the shared symbol table, one sealed base graph and the
    registry of per-case overlays. Overlay writes take the registry lock.
    """

    def __init__(self, base=None, symbols=None):
        self.symbols = symbols if symbols is not None else SymbolTable()
        self.base = base if base is not None else BaseGraph().seal()
        if not self.base.sealed:
            self.base.seal()
        self._overlays = {}
        self._lock = Lock()

    def intern(self, text):
        return self.symbols.intern(text)

    def create_overlay(self, case_id):
        """Register an empty overlay for case_id."""
        case_id = str(case_id)
        with self._lock:
            if case_id in self._overlays:
                raise DuplicateCase(f"overlay for case '{case_id}' already exists")
            overlay = Overlay(case_id)
            self._overlays[case_id] = overlay
        logging.debug(f"🧩 Created overlay for case {case_id}")
        return overlay

    def overlay(self, case_id):
        try:
            return self._overlays[str(case_id)]
        except KeyError:
            raise UnknownCase(f"no overlay registered for case '{case_id}'") from None

    def get_or_create_overlay(self, case_id):
        with self._lock:
            overlay = self._overlays.get(str(case_id))
            if overlay is None:
                overlay = Overlay(str(case_id))
                self._overlays[str(case_id)] = overlay
        return overlay

    def view(self, case_id):
        return LayeredView(self.base, self.overlay(case_id))

    def case_ids(self):
        return list(self._overlays)

    def __contains__(self, case_id):
        return str(case_id) in self._overlays

    def fresh_session(self, base=None):
        """Same symbols and base, empty overlay registry."""
        return LayeredStore(base=base if base is not None else self.base, symbols=self.symbols)


def _parse_fact(record, symbols, line_no, path=None):
    if isinstance(record, dict):
        try:
            parts = (record["s"], record["r"], record["o"])
        except KeyError as e:
            raise ParseError(f"missing field {e.args[0]!r}", line=line_no, path=path) from None
    elif isinstance(record, (list, tuple)) and len(record) == 3:
        parts = tuple(record)
    else:
        raise ParseError("expected {s, r, o} object or 3-element array", line=line_no, path=path)

    if not all(isinstance(p, str) for p in parts):
        raise ParseError("s, r and o must be strings", line=line_no, path=path)
    try:
        return Triple(*(symbols.intern(p) for p in parts))
    except EmptySymbol as e:
        raise ParseError(str(e), line=line_no, path=path) from None


def _build(numbered_records, symbols, path=None):
    base = BaseGraph()
    seen = 0
    for line_no, record in numbered_records:
        base.add(_parse_fact(record, symbols, line_no, path))
        seen += 1
    base.seal()
    logging.info(f"🧱 Built base graph: {len(base)} triples from {seen} records")
    return base, seen


def build_base(facts, symbols=None):
    """Build a sealed BaseGraph from an iterable of {s, r, o} records or 3-tuples."""
    symbols = symbols if symbols is not None else SymbolTable()
    base, _ = _build(enumerate(facts, start=1), symbols)
    return base


def load_base(path, symbols=None):
    """Build a sealed BaseGraph from a facts JSONL file. Returns (base, records_read)."""
    symbols = symbols if symbols is not None else SymbolTable()
    return _build(read_jsonl(path), symbols, path=path)


def save_base(base, path):
    """Persist the base graph in canonical JSONL form."""
    return write_jsonl(path, (t.to_dict() for t in base.triples))


def dump_overlay(overlay, path):
    """Debug dump of an overlay's current entries."""
    rows = (
        {"case_id": overlay.case_id, "s": s.text, "r": r.text, "o_new": o.text}
        for s, r, o in overlay.items()
    )
    return write_jsonl(path, rows)
