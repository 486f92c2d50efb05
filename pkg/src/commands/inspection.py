"""
Inspect command: base graph statistics and, optionally, one case's overlay.
"""
from engine.edit_engine import check_surface, impact_surface
from engine.layered_kg import dump_overlay
from utils.config import load_config
from utils.errors import UsageError

from .edit import open_session


def setup_inspect_command(subparsers, common):
    """Set up the inspect command."""
    parser = subparsers.add_parser("inspect", parents=[common], help="show base graph and overlay details")
    parser.add_argument("--base", required=True, help="base JSONL")
    parser.add_argument("--edits", help="edits JSONL")
    parser.add_argument("--case", help="case id to show (needs --edits)")
    parser.add_argument("--mock-fixtures", help="fixtures JSONL for the mock detector (text edits)")
    parser.add_argument("--dump-overlay", metavar="PATH", help="write the case overlay as JSONL (needs --case)")
    parser.set_defaults(handler=run_inspect, render=render_inspect)


async def run_inspect(args):
    if args.dump_overlay and args.case is None:
        raise UsageError("--dump-overlay needs --case")
    store, _, _ = await open_session(args, load_config())
    base = store.base
    info = {
        "triples": len(base),
        "entities": len(base.entities()),
        "relations": len(base.relations()),
        "fingerprint": base.fingerprint(),
        "indices_ok": base.check_indices(),
        "cases": store.case_ids(),
    }
    if args.case is not None:
        overlay = store.overlay(args.case)
        surface = impact_surface(store, args.case)
        info["case"] = {
            "case_id": overlay.case_id,
            "edits": [edit.to_dict() for edit in overlay.edits],
            "delta": [{"s": s.text, "r": r.text, "o_new": o.text} for s, r, o in overlay.items()],
            "edited_subjects": sorted(s.text for s in surface.subjects),
            "edited_relations": sorted(r.text for r in surface.relations),
            "surface_ok": check_surface(overlay),
        }
        if args.dump_overlay:
            info["case"]["dumped"] = dump_overlay(overlay, args.dump_overlay)
    return info


def render_inspect(info):
    lines = [
        f"🧱 {info['triples']} triples, {info['entities']} entities, {info['relations']} relations",
        f"🔑 {info['fingerprint']}",
        f"🗂️ {len(info['cases'])} cases",
    ]
    case = info.get("case")
    if case:
        lines.append(f"🧩 case {case['case_id']}: {len(case['edits'])} edits")
        lines.extend(f"  ({row['s']}, {row['r']}) -> {row['o_new']}" for row in case["delta"])
        lines.append(f"  subjects: {', '.join(case['edited_subjects']) or '-'}")
        lines.append(f"  relations: {', '.join(case['edited_relations']) or '-'}")
        if "dumped" in case:
            lines.append(f"💾 dumped {case['dumped']} overlay entries")
    return "\n".join(lines)
