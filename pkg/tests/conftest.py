"""
Shared fixtures. Puts src/ on sys.path the way run_capekg.py does.
"""
import asyncio
import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))

from engine.edit_engine import apply_edit_records, load_edits  # noqa: E402
from engine.layered_kg import LayeredStore, SymbolTable, load_base  # noqa: E402
from engine.oracles import build_oracles, load_fixtures  # noqa: E402

KPOP_DIR = os.path.join(ROOT, "data", "kpop")
KPOP_QUESTION = "What is the origin country of the genre of BlackPink?"


def kpop_path(name):
    return os.path.join(KPOP_DIR, name)


def open_kpop(llm_scripts=None):
    """K-pop store with cases A (Turkey), B (Germany) and C (no edits), plus mock oracles."""
    symbols = SymbolTable()
    base, _ = load_base(kpop_path("facts.jsonl"), symbols)
    store = LayeredStore(base, symbols)
    fixtures = load_fixtures(kpop_path("fixtures.jsonl"))
    fixtures.scripts.update(llm_scripts or {})
    oracles = build_oracles(store, fixtures)
    asyncio.run(apply_edit_records(store, load_edits(kpop_path("edits.jsonl")), oracles.detector))
    oracles.detector.add_overlays(store)
    return store, oracles, fixtures


@pytest.fixture
def kpop():
    return open_kpop()
