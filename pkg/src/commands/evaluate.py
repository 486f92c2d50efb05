"""
Eval command: MQuAKE-style evaluation under a batch setting and ablations.
Metrics JSON goes to stdout, per-case traces to a directory.
"""
import json
import logging
import os

from engine.eval_harness import (
    AblationFlags, BatchSetting, build_eval_store, eval_oracles, ingest, make_synthetic_suite,
    run_eval, template_decomposer,
)
from engine.oracles import MockFixtures, ScriptedLLM, Transcript, build_live_llm, load_fixtures
from engine.reasoner import Decomposer, load_demos
from utils.config import load_config
from utils.helpers import format_uptime
from utils.storage import read_jsonl

ABLATIONS = ("construction", "retrieval", "update")


def setup_eval_command(subparsers, common):
    """Set up the eval command."""
    parser = subparsers.add_parser("eval", parents=[common], help="run an evaluation and print metrics")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--dataset", help="MQuAKE-format JSON dataset")
    source.add_argument("--synthetic", type=int, metavar="N", help="generate an N-case synthetic suite instead")
    parser.add_argument("--seed", type=int, default=0, help="seed for --synthetic")
    parser.add_argument("--batch", help="cases edited together: a positive integer or 'all'")
    parser.add_argument("--ablate", action="append", choices=ABLATIONS, default=[],
                        help="disable a component (repeatable)")
    parser.add_argument("--config", help="config file")
    parser.add_argument("--traces", metavar="DIR", help="directory for the per-case trace JSONL")
    parser.add_argument("--facts", help="extra base facts JSONL merged with the cases' own facts")
    parser.add_argument("--mock-fixtures", help="fixtures JSONL for the mock oracles")
    parser.add_argument("--demos", help="demo pool JSONL for few-shot decomposition")
    parser.add_argument("--jobs", type=int, help="cases answered concurrently")
    parser.add_argument("--shuffle-seed", type=int, help="shuffle cases before batching")
    parser.add_argument("--live", action="store_true", help="use the configured LLM endpoint")
    parser.add_argument("--transcript", help="write the oracle call transcript to this JSONL path")
    parser.add_argument("--keep-going", action="store_true",
                        help="count oracle transport failures as misses instead of aborting")
    parser.set_defaults(handler=run_eval_command, render=render_eval)


def _traces_path(directory, setting, flags):
    name = "-".join(["traces", f"batch{setting.label}", *flags.names]) + ".jsonl"
    return os.path.join(directory, name)


async def run_eval_command(args):
    cfg = load_config(args.config, {
        "eval": {"batch": args.batch, "jobs": args.jobs, "shuffle_seed": args.shuffle_seed},
    })
    cases = ingest(make_synthetic_suite(args.synthetic, args.seed) if args.synthetic is not None else args.dataset)
    facts = [row for _, row in read_jsonl(args.facts)] if args.facts else []
    fixtures = load_fixtures(args.mock_fixtures) if args.mock_fixtures else MockFixtures()

    store = build_eval_store(cases, facts)
    transcript = Transcript()
    if args.live or cfg.oracles.live:
        llm = build_live_llm(cfg.oracles, transcript)
    else:
        llm = ScriptedLLM(fixtures.scripts, transcript=transcript)
    oracles = eval_oracles(store, cases, llm, transcript)
    for entity in fixtures.entities:
        oracles.detector.add_entity(entity)
    for relation, phrases in fixtures.relation_phrases.items():
        oracles.detector.add_relation(relation, phrases)
    for query, candidates in fixtures.detections.items():
        oracles.detector.script(query, candidates)

    if args.demos:
        decomposer = Decomposer(fixtures.decompositions, load_demos(args.demos), oracles.embedder, llm,
                                k=cfg.reasoner.demos_k)
    else:
        decomposer = template_decomposer(cases)
        for question, steps in fixtures.decompositions.items():
            decomposer.add_script(question, steps)

    setting = BatchSetting.parse(cfg.eval.batch)
    flags = AblationFlags.from_names(args.ablate)
    report = await run_eval(
        cases, setting, flags, cfg, oracles,
        store=store,
        decomposer=decomposer,
        jobs=cfg.eval.jobs,
        traces_path=_traces_path(args.traces, setting, flags) if args.traces else None,
        shuffle_seed=cfg.eval.shuffle_seed,
        fail_fast=not args.keep_going,
    )
    if args.transcript:
        transcript.dump(args.transcript)
    logging.info(f"⏱️ Finished in {format_uptime(report.wall_time)}, peak RSS {report.peak_rss_mb} MB")
    return report.to_dict()


def render_eval(metrics):
    return json.dumps(metrics, ensure_ascii=False, indent=2, sort_keys=True)
