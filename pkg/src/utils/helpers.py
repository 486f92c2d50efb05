"""
Helper utilities and constants for the CAPE-KG engine.
Text normalization, tokenization and the small scoring functions the mock
oracles and the answer matcher share.
"""
import re
import unicodedata
from datetime import timedelta

import numpy as np

# Placeholder a sub-question template uses for the previous hop's answer
PREV_PLACEHOLDER = "{prev}"

_WHITESPACE = re.compile(r"\s+")
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def normalize_text(text):
    """NFC-normalize, trim and collapse internal whitespace."""
    if text is None:
        return ""
    text = unicodedata.normalize("NFC", str(text))
    return _WHITESPACE.sub(" ", text).strip()


def fold_text(text):
    """Normalized, case-insensitive key for fallback matching."""
    return normalize_text(text).casefold()


def tokenize(text):
    """Lower-cased word tokens; punctuation and underscores split tokens."""
    return _TOKEN.findall(fold_text(text))


def jaccard(a, b):
    """Jaccard overlap of two token collections."""
    a, b = set(a), set(b)
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def window_jaccard(query_tokens, entry_tokens):
    """
    Best Jaccard between an entry and any contiguous query window of the
    entry's length. A verbatim mention scores 1.0.
    """
    if not query_tokens or not entry_tokens:
        return 0.0
    width = min(len(entry_tokens), len(query_tokens))
    entry = set(entry_tokens)
    best = 0.0
    for start in range(len(query_tokens) - width + 1):
        score = jaccard(query_tokens[start:start + width], entry)
        if score > best:
            best = score
            if best == 1.0:
                break
    return best


def mentions(text, phrase):
    """True if phrase occurs in text under normalized case-insensitive containment."""
    needle = fold_text(phrase)
    return bool(needle) and needle in fold_text(text)


def relation_phrase(relation_text):
    """Surface phrase for a relation identifier: origin_country -> origin country."""
    return normalize_text(str(relation_text).replace("_", " "))


def format_triple(s, r, o):
    """Render a triple the way prompts and traces show it: (s, r, o)."""
    return f"({s}, {r}, {o})"


def answers_match(prediction, golds):
    """Normalized case-insensitive exact match against any gold string."""
    if prediction is None:
        return False
    key = fold_text(prediction)
    return bool(key) and any(key == fold_text(g) for g in golds if g is not None)


def cosine(a, b):
    """Cosine similarity of two vectors; 0.0 if either is all zeros."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def format_uptime(uptime_delta):
    """Format a timedelta as a compact duration string."""
    if not isinstance(uptime_delta, timedelta):
        uptime_delta = timedelta(seconds=float(uptime_delta))
    minutes, seconds = divmod(uptime_delta.total_seconds(), 60)
    hours, minutes = divmod(int(minutes), 60)
    return f"{hours}h {minutes}m {seconds:.2f}s"
