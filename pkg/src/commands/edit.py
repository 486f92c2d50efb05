"""
Edit command: apply an edits file to a base graph and write the stamped edit log.
Also home of open_session, which query and inspect share.
"""
import logging

from engine.edit_engine import apply_edit_records, load_edits
from engine.layered_kg import LayeredStore, SymbolTable, load_base
from engine.oracles import MockFixtures, build_oracles, load_fixtures
from utils.config import load_config
from utils.storage import jsonl_writer


def setup_edit_command(subparsers, common):
    """Set up the edit command."""
    parser = subparsers.add_parser("edit", parents=[common], help="apply case-scoped edits to a base graph")
    parser.add_argument("--base", required=True, help="base JSONL written by build (or any facts file)")
    parser.add_argument("--edits", required=True, help="edits JSONL")
    parser.add_argument("--out", required=True, help="where to write the stamped edit log")
    parser.add_argument("--mock-fixtures", help="fixtures JSONL for the mock detector (text edits)")
    parser.add_argument("--config", help="config file")
    parser.set_defaults(handler=run_edit, render=render_edit)


async def open_session(args, cfg):
    """
    Load the base, build oracles and apply the edits file if one was given.
    Returns (store, oracles, fixtures).
    """
    fixtures = load_fixtures(args.mock_fixtures) if getattr(args, "mock_fixtures", None) else MockFixtures()
    symbols = SymbolTable()
    base, _ = load_base(args.base, symbols)
    store = LayeredStore(base, symbols)
    live = getattr(args, "live", False) or cfg.oracles.live
    oracles = build_oracles(store, fixtures, cfg.oracles, live=live)
    if getattr(args, "edits", None):
        await apply_edit_records(store, load_edits(args.edits), oracles.detector, tau=cfg.retrieval.tau)
        oracles.detector.add_overlays(store)
    return store, oracles, fixtures


def edit_log_rows(store):
    """Stamped edits per case in registration order; cases without edits as declarations."""
    for case_id in store.case_ids():
        edits = store.overlay(case_id).edits
        if not edits:
            yield {"case_id": case_id}
        for edit in edits:
            yield edit.to_dict()


async def run_edit(args):
    cfg = load_config(args.config)
    store, oracles, _ = await open_session(args, cfg)
    per_case = {case_id: len(store.overlay(case_id).edits) for case_id in store.case_ids()}
    with jsonl_writer(args.out) as write:
        for row in edit_log_rows(store):
            write(row)
    logging.info(f"💾 Wrote edit log for {len(per_case)} cases to {args.out}")
    return {"cases": len(per_case), "edits": sum(per_case.values()), "per_case": per_case}


def render_edit(summary):
    lines = [f"✏️ {summary['edits']} edits across {summary['cases']} cases"]
    lines.extend(f"  {case_id}: {count}" for case_id, count in summary["per_case"].items())
    return "\n".join(lines)
