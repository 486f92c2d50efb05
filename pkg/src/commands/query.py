"""
Query command: answer one multi-hop question under one case, with a hop trace.
"""
from engine.edit_engine import impact_surface
from engine.reasoner import Decomposer, load_demos, run_chain
from utils.config import load_config

from .edit import open_session


def setup_query_command(subparsers, common):
    """Set up the query command."""
    parser = subparsers.add_parser("query", parents=[common], help="answer a question under one case's edits")
    parser.add_argument("--base", required=True, help="base JSONL")
    parser.add_argument("--edits", required=True, help="edits JSONL")
    parser.add_argument("--case", required=True, help="case id whose overlay the question sees")
    parser.add_argument("--question", required=True, help="multi-hop question")
    parser.add_argument("--mock-fixtures", help="fixtures JSONL for the mock oracles")
    parser.add_argument("--demos", help="demo pool JSONL for few-shot decomposition")
    parser.add_argument("--config", help="config file")
    parser.add_argument("--transcript", help="write the oracle call transcript to this JSONL path")
    parser.add_argument("--live", action="store_true", help="use the configured LLM endpoint")
    parser.set_defaults(handler=run_query, render=render_query)


async def run_query(args):
    cfg = load_config(args.config)
    store, oracles, fixtures = await open_session(args, cfg)
    view = store.view(args.case)
    surface = impact_surface(store, args.case)

    demos = load_demos(args.demos) if args.demos else ()
    decomposer = Decomposer(fixtures.decompositions, demos, oracles.embedder, oracles.llm, k=cfg.reasoner.demos_k)
    decomp = await decomposer.decompose(args.question)
    answer = await run_chain(
        decomp, view, surface, oracles, cfg.retrieval, store.symbols, max_hops=cfg.reasoner.max_hops,
    )
    if args.transcript:
        oracles.transcript.dump(args.transcript)
    return {"case_id": view.case_id, **answer.to_dict()}


def render_query(result):
    lines = [f"💡 {result['final_answer'] or '(unanswered)'}"]
    for hop in result["hops"]:
        triple = hop["triple"]
        found = f"({triple['s']}, {triple['r']}, {triple['o']})" if triple else hop["answer"] or "-"
        lines.append(f"  hop {hop['hop']} [{hop['layer']}/{hop['stage']}] {hop['sub_question']} -> {found}")
    return "\n".join(lines)
