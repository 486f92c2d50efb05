"""
Build command: facts file -> sealed base graph artifact.
"""
from engine.layered_kg import SymbolTable, load_base, save_base


def setup_build_command(subparsers, common):
    """Set up the build command."""
    parser = subparsers.add_parser("build", parents=[common], help="build a sealed base graph from factual triples")
    parser.add_argument("--facts", required=True, help="facts JSONL, one {s, r, o} per line")
    parser.add_argument("--out", required=True, help="where to write the canonical base JSONL")
    parser.set_defaults(handler=run_build, render=render_build)


async def run_build(args):
    base, records = load_base(args.facts, SymbolTable())
    save_base(base, args.out)
    return {
        "triples": len(base),
        "entities": len(base.entities()),
        "relations": len(base.relations()),
        "duplicates": records - len(base),
        "fingerprint": base.fingerprint(),
    }


def render_build(summary):
    return (
        f"🧱 {summary['triples']} triples, {summary['entities']} entities, "
        f"{summary['relations']} relations ({summary['duplicates']} duplicates dropped)"
    )
