"""
Knowledge update: turn edit statements into structured edits, apply them to
the overlay of their own case with last-by-sequence conflict arbitration,
and keep each case's edit impact surface in step with its overlay.
"""
import logging
from dataclasses import dataclass, field, replace

from utils.errors import (
    CaseMismatch, EmptySymbol, ExtractionFailed, ParseError, SequenceError,
)
from utils.helpers import fold_text
from utils.storage import read_jsonl


@dataclass(frozen=True)
class Edit:
    """A case-scoped rewrite (s, r, o_true -> o_new). seq is stamped on apply if unset."""
    case_id: str
    s: object
    r: object
    o_new: object
    o_true: object = None
    seq: int | None = None

    def to_dict(self):
        return {
            "case_id": self.case_id,
            "s": self.s.text,
            "r": self.r.text,
            "o_true": self.o_true.text if self.o_true is not None else None,
            "o_new": self.o_new.text,
            "seq": self.seq,
        }


@dataclass(frozen=True)
class EditStatement:
    """Natural-language edit, e.g. 'The origin country of K-pop is Turkey.'"""
    raw_text: str
    case_id: str

    def __post_init__(self):
        if not (self.raw_text or "").strip():
            raise ParseError(f"empty edit statement for case '{self.case_id}'")


@dataclass(frozen=True)
class StructuredEdit:
    """Edit already given as a triple (raw strings), e.g. a dataset rewrite."""
    case_id: str
    s: str
    r: str
    o_new: str
    o_true: str | None = None


@dataclass(frozen=True)
class ImpactSurface:
    """Edited subjects S_edit and edited relations P_edit of one case."""
    case_id: str
    subjects: frozenset = field(default_factory=frozenset)
    relations: frozenset = field(default_factory=frozenset)

    def touches(self, subject=None, relation=None):
        return (subject is not None and subject in self.subjects) or \
            (relation is not None and relation in self.relations)


@dataclass(frozen=True)
class SurfaceDelta:
    """Subjects and relations an edit newly added to its case's surface."""
    subjects: frozenset
    relations: frozenset


def _intern_structured(edit, symbols):
    try:
        return Edit(
            case_id=str(edit.case_id),
            s=symbols.intern(edit.s),
            r=symbols.intern(edit.r),
            o_new=symbols.intern(edit.o_new),
            o_true=symbols.intern(edit.o_true) if edit.o_true else None,
        )
    except EmptySymbol as e:
        raise ExtractionFailed(f"case '{edit.case_id}': {e}") from None


def _position(text, symbol):
    index = fold_text(text).find(fold_text(symbol.text))
    return index if index >= 0 else len(text)


async def extract_edit(stmt, detector, symbols, tau=0.6, base=None):
    """
    Structured edits are interned directly. Statements go through the
    detector: top relation plus entity candidates scoring at least tau.
    The subject is the candidate with a base fact for that relation
    (else the one mentioned first); o_new is the best remaining candidate.
    """
    if isinstance(stmt, StructuredEdit):
        return _intern_structured(stmt, symbols)

    relation = await detector.detect_relation(stmt.raw_text)
    if relation is None or relation[1] < tau:
        raise ExtractionFailed(f"no relation above {tau} in edit statement: {stmt.raw_text!r}")
    r = relation[0]

    candidates = [c for c in await detector.detect_entities(stmt.raw_text) if c.score >= tau]
    if len(candidates) < 2:
        raise ExtractionFailed(f"need a subject and an object above {tau}: {stmt.raw_text!r}")

    by_position = sorted(candidates, key=lambda c: _position(stmt.raw_text, c.entity))
    subject = None
    if base is not None:
        anchored = [c for c in sorted(candidates, key=lambda c: -c.score) if base.objects(c.entity, r)]
        if anchored:
            subject = anchored[0]
    if subject is None:
        subject = by_position[0]

    rest = [c for c in sorted(candidates, key=lambda c: -c.score) if c.entity != subject.entity]
    if not rest:
        raise ExtractionFailed(f"no object distinct from subject in: {stmt.raw_text!r}")
    o_new = rest[0].entity
    o_true = None
    if base is not None:
        objects = base.objects(subject.entity, r)
        o_true = objects[0] if objects else None

    return Edit(case_id=str(stmt.case_id), s=subject.entity, r=r, o_new=o_new, o_true=o_true)


def apply_edit(overlay, edit):
    """
    Write one edit into its own case's overlay. All-or-nothing under the
    overlay lock; the base graph and other overlays are never touched.
    Returns (stamped_edit, SurfaceDelta).
    """
    if edit.case_id != overlay.case_id:
        raise CaseMismatch(f"edit for case '{edit.case_id}' applied to overlay of case '{overlay.case_id}'")

    with overlay._lock:
        last = overlay.last_seq
        if edit.seq is None:
            edit = replace(edit, seq=last + 1)
        elif edit.seq <= last:
            raise SequenceError(f"case '{overlay.case_id}': seq {edit.seq} does not follow {last}")

        new_subjects = frozenset() if edit.s in overlay._subjects else frozenset([edit.s])
        new_relations = frozenset() if edit.r in overlay._relations else frozenset([edit.r])

        overlay._delta[(edit.s.id, edit.r.id)] = (edit.s, edit.r, edit.o_new)
        overlay._log.append(edit)
        overlay._subjects.setdefault(edit.s, None)
        overlay._relations.setdefault(edit.r, None)

    logging.debug(f"✏️ [{overlay.case_id}] #{edit.seq} ({edit.s}, {edit.r}) -> {edit.o_new}")
    return edit, SurfaceDelta(new_subjects, new_relations)


def arbitrate(edit_log):
    """For each (s, r) the edit with the highest seq wins. Pure function of the log."""
    winners = {}
    case_id = None
    for edit in edit_log:
        if case_id is None:
            case_id = edit.case_id
        elif edit.case_id != case_id:
            raise CaseMismatch(f"edit log mixes cases '{case_id}' and '{edit.case_id}'")
        key = (edit.s, edit.r)
        current = winners.get(key)
        if current is None or edit.seq > current.seq:
            winners[key] = edit
    return {key: edit.o_new for key, edit in winners.items()}


def impact_surface(store, case_id):
    """Snapshot of S_edit and P_edit for a registered case (UnknownCase otherwise)."""
    return surface_of(store.overlay(case_id))


def surface_of(overlay):
    with overlay._lock:
        return ImpactSurface(
            case_id=overlay.case_id,
            subjects=frozenset(overlay._subjects),
            relations=frozenset(overlay._relations),
        )


def rebuild_surface(case_id, edit_log):
    """Recompute the surface from an edit log by set comprehension."""
    return ImpactSurface(
        case_id=case_id,
        subjects=frozenset(e.s for e in edit_log),
        relations=frozenset(e.r for e in edit_log),
    )


def check_surface(overlay):
    """True if the overlay's surface and delta both match a replay of its log."""
    log = overlay.edits
    rebuilt = rebuild_surface(overlay.case_id, log)
    return surface_of(overlay) == rebuilt and overlay.delta == arbitrate(log)


def parse_edit_record(record, line_no=None, path=None):
    """
    One edits-file line -> StructuredEdit, EditStatement, or a bare case id
    (a {"case_id": ...} line declaring a case with no edits).
    """
    if not isinstance(record, dict) or "case_id" not in record:
        raise ParseError("edit record needs a case_id", line=line_no, path=path)
    case_id = str(record["case_id"])
    if "text" in record:
        try:
            return EditStatement(raw_text=str(record["text"]), case_id=case_id)
        except ParseError as e:
            raise ParseError(str(e), line=line_no, path=path) from None
    keys = {"s", "r", "o_new"}
    if keys <= record.keys():
        for key in keys:
            if not isinstance(record[key], str):
                raise ParseError(f"field {key!r} must be a string", line=line_no, path=path)
        o_true = record.get("o_true")
        return StructuredEdit(case_id, record["s"], record["r"], record["o_new"], o_true)
    if keys & record.keys():
        missing = sorted(keys - record.keys())
        raise ParseError(f"edit record missing {', '.join(missing)}", line=line_no, path=path)
    return case_id


def load_edits(path):
    """Read an edits JSONL file into a list of edit records and case declarations."""
    return [parse_edit_record(record, line_no, path) for line_no, record in read_jsonl(path)]


async def apply_edit_records(store, records, detector=None, tau=0.6):
    """
    Register every case mentioned in `records` and apply its edits in file
    order. Returns the list of stamped edits.
    """
    applied = []
    for record in records:
        if isinstance(record, str):
            store.get_or_create_overlay(record)
            continue
        if isinstance(record, EditStatement) and detector is None:
            raise ExtractionFailed("text edits need a detector")
        edit = await extract_edit(record, detector, store.symbols, tau=tau, base=store.base)
        overlay = store.get_or_create_overlay(edit.case_id)
        stamped, _ = apply_edit(overlay, edit)
        applied.append(stamped)
    logging.info(f"📝 Applied {len(applied)} edits across {len(store.case_ids())} cases")
    return applied
