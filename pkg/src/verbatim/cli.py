"""Command-line surface: index building, querying, evaluation, and studies.

Machine output is canonical JSON (sorted keys, no whitespace) on stdout so
repeated runs with identical inputs are byte-identical; diagnostics and
errors go to stderr.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

import numpy as np

from .binio import FormatError
from .corpus import CorpusFormatError, CorpusIndex, DocIndexManager, ingest, read_jsonl
from .decoding import DecodeConfig, run_query
from .metrics import evaluate
from .ngram import NgramProvider, train_provider
from .study import false_pruning_study, make_decoy_corpus

TRACE_VERSION = 1

# flag destination -> DecodeConfig field
_CONFIG_FLAGS = {
    "max_clues": "max_clues",
    "max_evidence": "max_evidence",
    "min_evidence_tokens": "min_evidence_tokens",
    "top_aux": "top_aux",
    "top_gen": "top_gen",
    "top_lex": "top_lex",
    "num_candidates": "num_candidates",
    "weight_generated": "weight_generated",
    "weight_lexical": "weight_lexical",
    "window_context": "window_context",
    "window_max_len": "window_max_len",
    "future_weight": "future_weight",
    "answer_budget": "answer_budget",
    "max_steps": "max_steps",
    "constraints": "constraint_mode",
    "num_beams": "num_beams",
    "beam_groups": "num_beam_groups",
    "diversity_penalty": "diversity_penalty",
}


def emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def b64_floats(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of decoder settings; flags override it")
    g = parser.add_argument_group("decoder settings")
    g.add_argument("--max-clues", type=int)
    g.add_argument("--max-evidence", type=int)
    g.add_argument("--min-evidence-tokens", type=int)
    g.add_argument("--top-aux", type=int, help="auxiliary single-term clues kept")
    g.add_argument("--top-gen", type=int, help="documents kept from generated-clue ranking")
    g.add_argument("--top-lex", type=int, help="documents kept from lexical ranking")
    g.add_argument("--num-candidates", type=int, help="fused candidate documents")
    g.add_argument("--weight-generated", type=float, help="fusion weight for generated ranking")
    g.add_argument("--weight-lexical", type=float, help="fusion weight for lexical ranking")
    g.add_argument("--window-context", type=int, help="tokens kept either side of a clue hit")
    g.add_argument("--window-max-len", type=int, help="cap on merged window length")
    g.add_argument("--future-weight", type=float, help="bonus scale for window-aligned tokens")
    g.add_argument("--answer-budget", type=int)
    g.add_argument("--max-steps", type=int)
    g.add_argument("--constraints", choices=["corpus", "candidates"])
    g.add_argument("--num-beams", type=int)
    g.add_argument("--beam-groups", type=int)
    g.add_argument("--diversity-penalty", type=float)


def decode_config(args: argparse.Namespace) -> DecodeConfig:
    values: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError(f"{args.config}: config file must hold a JSON object")
        values.update(loaded)
    for dest, field in _CONFIG_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[field] = v
    return DecodeConfig.from_mapping(values)


def load_engine(args: argparse.Namespace):
    corpus = CorpusIndex.load(args.index)
    manager = DocIndexManager(corpus)
    with open(args.model, "rb") as fh:
        provider = NgramProvider.load(fh)
    return corpus, manager, provider


def read_eval_records(path: str) -> list[dict]:
    records = list(read_jsonl(path))
    if not records:
        raise ValueError(f"{path}: evaluation set is empty")
    for i, rec in enumerate(records):
        if "query" not in rec or not rec.get("answers"):
            raise ValueError(f"{path}: record {i} needs a query and non-empty answers")
    return records


def write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


# ──────────────────────────────────────────────
# Commands
# ──────────────────────────────────────────────

def cmd_build(args: argparse.Namespace) -> int:
    docs = list(read_jsonl(args.corpus))
    corpus = ingest(docs, sample_rate=args.sample_rate)
    corpus.save(args.out)
    emit(
        {
            "documents": corpus.n_docs,
            "tokens": corpus.total_tokens,
            "vocab_size": corpus.vocab.size,
        }
    )
    return 0


def cmd_fit_model(args: argparse.Namespace) -> int:
    corpus = CorpusIndex.load(args.index)
    examples = list(read_jsonl(args.examples)) if args.examples else []
    provider = train_provider(corpus, examples, order=args.order, alpha=args.alpha)
    with open(args.out, "wb") as fh:
        provider.save(fh)
    emit(
        {
            "order": provider.order,
            "alpha": provider.alpha,
            "extended_size": provider.extended_size,
            "examples": len(examples),
        }
    )
    return 0


def render_pretty(out: dict) -> str:
    lines = [f"query: {out['query']}"]
    lines.append("clues: " + (", ".join(out["clues"]) if out["clues"] else "(none)"))
    if out["candidates"]:
        lines.append("candidates: " + ", ".join(str(d) for d in out["candidates"]))
    for e in out["evidence"]:
        lines.append(f"evidence [{e['source_id']} @ {e['start']}]: {e['text']}")
    lines.append(f"answer: {out['answer'] or '(none)'}")
    d = out["diagnostics"]
    lines.append(
        f"-- stage={d['stage']} finished={d['finished']} steps={d['steps']}"
        f" tokens={d['input_tokens']}+{d['output_tokens']}"
    )
    return "\n".join(lines) + "\n"


def cmd_query(args: argparse.Namespace) -> int:
    config = decode_config(args)
    if args.trace_out and config.num_beams > 1:
        raise ValueError("--trace-out requires greedy decoding (--num-beams 1)")
    corpus, manager, provider = load_engine(args)
    trace: list | None = [] if args.trace_out else None
    out = run_query(args.query, corpus, manager, provider, config, trace=trace)
    if args.trace_out:
        payload = {
            "version": TRACE_VERSION,
            "query": args.query,
            "config": config.to_mapping(),
            "extended_size": provider.extended_size,
            "steps": [
                {
                    "raw": b64_floats(step["raw"]),
                    "adjusted": b64_floats(step["adjusted"]),
                    "token": step["token"],
                }
                for step in trace
            ],
            "output": out,
        }
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
    if args.pretty:
        sys.stdout.write(render_pretty(out))
    else:
        emit(out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = decode_config(args)
    corpus, manager, provider = load_engine(args)
    records = read_eval_records(args.eval)
    outputs = [
        run_query(rec["query"], corpus, manager, provider, config) for rec in records
    ]
    report = evaluate(outputs, records, ks=tuple(args.k))
    emit(report)
    return 0


def cmd_false_pruning(args: argparse.Namespace) -> int:
    config = decode_config(args)
    corpus, manager, provider = load_engine(args)
    records = read_eval_records(args.eval)
    report = false_pruning_study(
        corpus,
        manager,
        provider,
        records,
        beam_sizes=tuple(args.beams),
        base_config=config,
        positions=args.positions,
    )
    emit(report)
    return 0


def cmd_make_decoys(args: argparse.Namespace) -> int:
    docs, examples, records = make_decoy_corpus(
        n_families=args.families,
        distractor_reps=args.reps,
        n_decoys=args.decoys,
        seed=args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_dir / "corpus.jsonl", docs)
    write_jsonl(out_dir / "examples.jsonl", examples)
    write_jsonl(out_dir / "eval.jsonl", records)
    emit(
        {
            "documents": len(docs),
            "examples": len(examples),
            "records": len(records),
            "out_dir": str(out_dir),
        }
    )
    return 0


def cmd_bridge(args: argparse.Namespace) -> int:
    from .bridge import serve

    serve(sys.stdin, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="verbatim",
        description="Constrained-retrieval decoding over an FM-indexed corpus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="index a JSON Lines corpus")
    p.add_argument("--corpus", required=True, help="JSONL with id/text (+optional title)")
    p.add_argument("--out", required=True, help="output index directory")
    p.add_argument("--sample-rate", type=int, default=None, help="suffix-array sampling rate")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("fit-model", help="fit the n-gram logit provider")
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--examples", help="JSONL of structured training examples")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_fit_model)

    p = sub.add_parser("query", help="decode one query")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--pretty", action="store_true", help="human-readable rendering")
    p.add_argument("--trace-out", help="record per-step logits for replay")
    add_config_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="batch evaluation with retrieval metrics")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--eval", required=True, help="JSONL of {query, answers[, gold_doc_ids]}")
    p.add_argument("--k", type=int, nargs="+", default=[1, 5], help="recall cutoffs")
    add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "false-pruning", help="compare corpus vs candidate constraints over beam sizes"
    )
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--beams", type=int, nargs="+", default=[1, 3, 5])
    p.add_argument("--positions", type=int, default=13, help="prefix-relevance curve length")
    add_config_flags(p)
    p.set_defaults(func=cmd_false_pruning)

    p = sub.add_parser("make-decoys", help="generate the decoy-family study fixture")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--families", type=int, default=50)
    p.add_argument("--reps", type=int, default=3, help="near-duplicate distractors per family")
    p.add_argument("--decoys", type=int, default=4, help="shared-prefix decoys per family")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_decoys)

    p = sub.add_parser("bridge", help="serve sessions over line-delimited JSON on stdio")
    p.set_defaults(func=cmd_bridge)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CorpusFormatError, FormatError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
