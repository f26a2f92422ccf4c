"""Decoy-corpus generator and the false-pruning comparison study.

The generated corpus stresses early decoding decisions: each family pairs one
target document with near-duplicate distractors and a clutch of decoy
documents that share the target's opening words but then veer off to
unrelated entities.  Under whole-corpus constraints a decoder tends to commit
to the (more frequent) decoy phrasing before any disambiguating token
arrives; restricting constraints to ranked candidate documents removes the
decoy branch entirely.
"""

from __future__ import annotations

import numpy as np

from .corpus import CorpusIndex, DocIndexManager
from .decoding import DecodeConfig, LogitsProvider, TermOverlapScorer, run_query
from .metrics import HIT_DEFINITION, contains_answer

PREFIX_POSITIONS = 13


def make_decoy_corpus(
    n_families: int = 50,
    distractor_reps: int = 3,
    n_decoys: int = 4,
    seed: int = 0,
) -> tuple[list[dict], list[dict], list[dict]]:
    """Build (documents, training examples, eval records) for the study.

    Family i contributes:
      target      "the capital city of nation_i is metro_i"        (gold)
      distractor  "the capital region of nation_i has mistpeak_i"  x reps
      decoys      "the capital of mistland_ij is mistville_ij"     x n_decoys

    Every document opens with "the capital", so the corpus-wide continuation
    set at that point is dominated by decoy (*n_decoys per family*) and
    distractor mass, while only the target leads to the answer.  The seed
    permutes family order; contents are otherwise fixed.
    """
    if n_families < 1:
        raise ValueError("need at least one family")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_families)

    docs: list[dict] = []
    examples: list[dict] = []
    records: list[dict] = []
    for fam in order:
        i = f"{int(fam):02d}"
        target = f"the capital city of nation{i} is metro{i}"
        gold_doc = len(docs)
        docs.append({"id": f"family{i}-target", "title": f"nation{i}", "text": target})
        for r in range(distractor_reps):
            docs.append(
                {
                    "id": f"family{i}-near{r}",
                    "title": f"nation{i} region",
                    "text": f"the capital region of nation{i} has mistpeak{i}",
                }
            )
        for j in range(n_decoys):
            docs.append(
                {
                    "id": f"family{i}-decoy{j}",
                    "title": f"mistland{i}{j}",
                    "text": f"the capital of mistland{i}{j} is mistville{i}{j}",
                }
            )
        examples.append(
            {
                "query": f"the capital city of nation{i}",
                "clues": [f"nation{i}"],
                "evidences": [target],
                "answer": f"metro{i}",
            }
        )
        records.append(
            {
                "query": f"the capital city of nation{i}",
                "answers": [f"metro{i}"],
                "gold_doc_ids": [gold_doc],
            }
        )
    return docs, examples, records


def _any_evidence_hit(output: dict, answers: list[str]) -> bool:
    return any(contains_answer(e["text"], answers) for e in output["evidence"])


def prefix_relevance_curve(
    output: dict, record: dict, corpus: CorpusIndex, positions: int = PREFIX_POSITIONS
) -> list[float]:
    """Query/evidence-prefix overlap at each emitted position.

    Concatenates the emitted evidence spans in order and scores each prefix
    with the default term-overlap scorer; once the evidence runs out the last
    value is carried forward, and no evidence at all scores zero throughout.
    """
    scorer = TermOverlapScorer()
    query_tokens = corpus.vocab.encode_known(record["query"].split())
    evid: list[int] = []
    for e in output["evidence"]:
        evid.extend(corpus.vocab.encode_known(e["text"].split()))
    curve = []
    for p in range(1, positions + 1):
        prefix = evid[: min(p, len(evid))]
        curve.append(scorer.score(prefix, query_tokens) if prefix else 0.0)
    return curve


def false_pruning_study(
    corpus: CorpusIndex,
    manager: DocIndexManager,
    provider: LogitsProvider,
    records: list[dict],
    beam_sizes: tuple[int, ...] = (1, 3, 5),
    base_config: DecodeConfig | None = None,
    positions: int = PREFIX_POSITIONS,
    collect_outputs: list | None = None,
) -> dict:
    """Compare whole-corpus vs candidate-set constraints on the decoy fixture.

    Returns evidence-hit rates per constraint mode per beam size alongside
    mean prefix-relevance curves (computed from the beam-size-1 decodes).
    Appends every decoded output to ``collect_outputs`` when given, so
    callers can run whole-suite checks such as groundedness.
    """
    if not records:
        raise ValueError("study requires at least one eval record")
    base = base_config or DecodeConfig()
    modes = ("corpus", "candidates")
    beam_results = []
    curves: dict[str, list[list[float]]] = {m: [] for m in modes}
    for beams in beam_sizes:
        row: dict = {"beam_size": beams}
        for mode in modes:
            config = base.replace(constraint_mode=mode, num_beams=beams, num_beam_groups=0)
            hits = 0
            for rec in records:
                out = run_query(rec["query"], corpus, manager, provider, config)
                if collect_outputs is not None:
                    collect_outputs.append(out)
                hits += _any_evidence_hit(out, rec["answers"])
                if beams == 1:
                    curves[mode].append(prefix_relevance_curve(out, rec, corpus, positions))
            row[mode] = hits / len(records)
        beam_results.append(row)

    report = {
        "hit_definition": HIT_DEFINITION,
        "queries": len(records),
        "beam_results": beam_results,
        "prefix_relevance": {
            "positions": list(range(1, positions + 1)),
        },
    }
    for mode in modes:
        if curves[mode]:
            arr = np.asarray(curves[mode], dtype=np.float64)
            report["prefix_relevance"][mode] = [float(x) for x in arr.mean(axis=0)]
    return report
