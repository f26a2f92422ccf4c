"""Acceptance suite: one test — and one printed pass/fail line — per criterion.

Criteria are exact worked examples, oracle equivalences, and directional
mechanism checks at desk scale.  Expensive artifacts (the decoy study, the
random-corpus sweeps) are module-scoped fixtures shared across criteria.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

import naive_oracles as oracle
from test_decoding import oracle_mask, stream_and_docs
from verbatim.cli import main
from verbatim.corpus import DocIndexManager, ingest
from verbatim.decoding import DecodeConfig, begin_session, greedy_step
from verbatim.fmindex import FMIndex, reverse_stream
from verbatim.ngram import train_provider
from verbatim.ranking import RankedList, fuse
from verbatim.study import false_pruning_study, make_decoy_corpus


def criterion(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" :: {detail}" if detail else "")
    print(line)
    assert ok, line


# ──────────────────────────────────────────────
# Shared fixtures
# ──────────────────────────────────────────────

CAPITAL_DOCS = [
    {"id": "fr-target", "title": "france", "text": "the capital city of france is paris"},
    {"id": "fr-distract", "title": "france admin", "text": "the capital region of france has marseille"},
    {"id": "de", "title": "germania", "text": "the capital of germania is berlin"},
    {"id": "es", "title": "hispania", "text": "the capital of hispania is madrid"},
]

CAPITAL_EXAMPLES = [
    {
        "query": "what is the capital of france",
        "clues": ["france"],
        "evidences": ["the capital city of france is paris"],
        "answer": "paris",
    }
]


@pytest.fixture(scope="module")
def decoy_engine():
    docs, examples, records = make_decoy_corpus(n_families=50, seed=0)
    corpus = ingest(docs)
    manager = DocIndexManager(corpus)
    provider = train_provider(corpus, examples, order=3)
    return corpus, manager, provider, records


@pytest.fixture(scope="module")
def study_result(decoy_engine):
    corpus, manager, provider, records = decoy_engine
    outputs: list[dict] = []
    started = time.perf_counter()
    report = false_pruning_study(
        corpus, manager, provider, records, beam_sizes=(1, 3, 5), collect_outputs=outputs
    )
    elapsed = time.perf_counter() - started
    return report, outputs, elapsed


@pytest.fixture(scope="module")
def capital_engine():
    corpus = ingest(CAPITAL_DOCS)
    manager = DocIndexManager(corpus)
    provider = train_provider(corpus, CAPITAL_EXAMPLES, order=3)
    return corpus, manager, provider


# ──────────────────────────────────────────────
# Criterion 1: banana fixture, bit-exact, < 1 s
# ──────────────────────────────────────────────

def test_banana_fixture_bit_exact():
    started = time.perf_counter()
    # b a n a n a $  with $=0, a=2, b=3, n=4
    sym = {"$": 0, "a": 2, "b": 3, "n": 4}
    letter = {v: k for k, v in sym.items()}
    text = [sym[c] for c in "banana"] + [sym["$"]]
    fm = FMIndex.build(np.array(text, dtype=np.uint32), vocab_size=5)

    bwt = "".join(letter[int(t)] for t in fm.bwt)
    first_column = "".join(sorted(bwt))
    ok = bwt == "annb$aa" and first_column == "$aaabnn"

    # backward-search trace for "ana" over 1-based inclusive rows
    trace = []
    interval = fm.full_interval()
    for symbol in reversed([sym[c] for c in "ana"]):
        interval = fm.backward_step(interval, symbol)
        trace.append((interval.lo + 1, interval.hi + 1))
    ok = ok and trace == [(2, 4), (6, 7), (3, 4)]

    pattern = [sym[c] for c in "ana"]
    ok = ok and fm.count(pattern) == 2

    rev = FMIndex.build(reverse_stream(np.array(text, dtype=np.uint32)), vocab_size=5)
    following = {
        letter[s] for s in rev.allowed_next(rev.pattern_interval(list(reversed(pattern))))
    }
    ok = ok and following == {"n", "$"}

    elapsed = time.perf_counter() - started
    ok = ok and elapsed < 1.0
    criterion(
        "banana fixture bit-exact (BWT, F, trace, count, allowed-next) in < 1 s",
        ok,
        f"bwt={bwt} F={first_column} trace={trace} count={fm.count(pattern)} "
        f"next={sorted(following)} elapsed={elapsed:.3f}s",
    )


# ──────────────────────────────────────────────
# Criterion 2: index oracle suite, ≥ 20 corpora, ≥ 500 patterns, < 60 s
# ──────────────────────────────────────────────

def test_index_oracle_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(20240817)
    n_corpora, n_patterns = 20, 500
    mismatches = 0
    checked = 0
    for trial in range(n_corpora):
        n = int(rng.integers(400, 10_000))
        vocab = int(rng.integers(16, 257))
        if trial % 2:
            body = rng.integers(1, vocab, size=n - 1)
        else:  # skewed draw so short patterns repeat often
            body = (rng.zipf(1.7, size=n - 1) % (vocab - 1)) + 1
        stream = np.append(body, 0).astype(np.uint32)
        fm = FMIndex.build(stream, vocab_size=vocab, sample_rate=4)
        rev = FMIndex.build(reverse_stream(stream), vocab_size=vocab, sample_rate=4)
        stream_list = stream.tolist()

        for p in range(n_patterns):
            m = int(rng.integers(1, 9))
            if p % 5 == 0:
                pattern = [int(x) for x in rng.integers(1, vocab, size=m)]
            else:
                start = int(rng.integers(0, n - m))
                pattern = stream_list[start : start + m]
            want_pos = oracle.occurrences(stream_list, pattern)
            got_pos = fm.locate(pattern)
            want_prev = oracle.preceding_symbols(stream_list, pattern)
            got_prev = {
                s: iv.count() for s, iv in fm.allowed_next(fm.pattern_interval(pattern)).items()
            }
            want_next = oracle.following_symbols(stream_list, pattern)
            got_next = set(rev.allowed_next(rev.pattern_interval(list(reversed(pattern)))))
            checked += 1
            if (
                fm.count(pattern) != len(want_pos)
                or list(got_pos) != want_pos
                or got_prev != want_prev
                or got_next != want_next
            ):
                mismatches += 1
    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and checked == n_corpora * n_patterns and elapsed < 60.0
    criterion(
        "count/locate and both extension directions equal naive scans on 20 corpora x 500 patterns in < 60 s",
        ok,
        f"checked={checked} mismatches={mismatches} elapsed={elapsed:.1f}s",
    )


# ──────────────────────────────────────────────
# Criterion 3: scoring arithmetic to 1e-9
# ──────────────────────────────────────────────

def test_scoring_arithmetic_worked_examples():
    from verbatim.corpus import ClueStats
    from verbatim.ranking import Clue, GENERATED, clue_doc_score, clue_weight, score_documents

    ok = True
    # clue weight: ln(N/cf) + ln(N/df) on 4 docs, cf=df=2 -> 2 ln 2
    got = clue_weight(ClueStats(cf=2, df=2, tf={0: 1, 3: 1}), n_docs=4)
    ok &= math.isclose(got, 2 * math.log(2), rel_tol=1e-9)

    # document relevance: sum of weight * ln(1 + tf)
    corpus = ingest(
        [
            {"id": "d0", "text": "red fox red fox jumps"},
            {"id": "d1", "text": "red fox"},
            {"id": "d2", "text": "blue crab sleeps"},
        ]
    )
    red_fox = tuple(corpus.vocab.encode_known(["red", "fox"]))
    from verbatim.corpus import clue_stats

    stats = clue_stats(corpus, red_fox)
    weight = clue_weight(stats, corpus.n_docs)
    hand_weight = math.log(3 / 3) + math.log(3 / 2)
    ok &= math.isclose(weight, hand_weight, rel_tol=1e-9)
    ok &= math.isclose(clue_doc_score(stats, 0), math.log(3), rel_tol=1e-9)
    ranked = score_documents([Clue(red_fox, GENERATED, weight)], corpus, k=5)
    ok &= math.isclose(
        dict(ranked.entries)[0], hand_weight * math.log(3), rel_tol=1e-9
    )

    # fusion with w1=1, w2=2: rank 2 and rank 1 -> 1/2 + 2/1 = 2.5
    fused = fuse(
        RankedList([(4, 9.0), (7, 5.0)]),
        RankedList([(7, 3.0), (9, 2.0)]),
        weight_generated=1.0,
        weight_lexical=2.0,
        k=10,
    )
    ok &= math.isclose(fused.scores[7], 2.5, rel_tol=1e-9)
    ok &= fused.doc_ids[0] == 7
    criterion(
        "clue weights, document scores, and w1=1/w2=2 fusion (S=2.5) match hand values at 1e-9",
        ok,
        f"weight={got!r} fusion={fused.scores[7]!r}",
    )


# ──────────────────────────────────────────────
# Criteria 4 and 7: groundedness over ≥ 200 decodes; autonomous stopping
# ──────────────────────────────────────────────

def _verify_grounded(outputs, corpus) -> tuple[int, int, int]:
    doc_lists = [corpus.doc_tokens(i).tolist() for i in range(corpus.n_docs)]
    bad_evidence = 0
    bad_clues = 0
    for out in outputs:
        for e in out["evidence"]:
            toks = corpus.vocab.encode_known(e["text"].split())
            span = doc_lists[e["doc_id"]][e["start"] : e["start"] + len(toks)]
            if not toks or span != toks:
                bad_evidence += 1
        for clue in out["clues"]:
            toks = corpus.vocab.encode_known(clue.split())
            if not toks or corpus.forward.count(toks) < 1:
                bad_clues += 1
    return len(outputs), bad_evidence, bad_clues


def test_groundedness_of_every_decode(study_result, decoy_engine, capital_engine):
    report, outputs, _ = study_result
    corpus, _, _, _ = decoy_engine
    n, bad_ev, bad_clues = _verify_grounded(outputs, corpus)

    cap_corpus, cap_manager, cap_provider = capital_engine
    from verbatim.decoding import run_query

    cap_outputs = [
        run_query("what is the capital of france", cap_corpus, cap_manager, cap_provider),
        run_query("what is the capital of germania", cap_corpus, cap_manager, cap_provider),
    ]
    n2, bad_ev2, bad_clues2 = _verify_grounded(cap_outputs, cap_corpus)

    total = n + n2
    ok = total >= 200 and bad_ev + bad_ev2 == 0 and bad_clues + bad_clues2 == 0
    criterion(
        "100% of evidences are exact substrings of their claimed source and all clues occur in the corpus (>= 200 decodes)",
        ok,
        f"decodes={total} bad_evidence={bad_ev + bad_ev2} bad_clues={bad_clues + bad_clues2}",
    )


def test_autonomous_stopping_keeps_evidence_count_low(study_result):
    report, outputs, _ = study_result
    # every decode ran with the default cap of five evidence spans
    counts = [len(out["evidence"]) for out in outputs]
    mean = sum(counts) / len(counts)
    ok = DecodeConfig().max_evidence == 5 and mean < 5.0
    criterion(
        "with max_evidence=5 the mean emitted evidence count stays strictly below 5",
        ok,
        f"mean={mean:.3f} over {len(counts)} decodes",
    )


# ──────────────────────────────────────────────
# Criterion 5: constraint mask equals brute force at every step, ≥ 50 decodes
# ──────────────────────────────────────────────

def test_mask_matches_brute_force_on_full_decodes():
    rng = np.random.default_rng(77)
    words = [f"w{i}" for i in range(20)]
    decodes = 0
    steps_checked = 0
    mismatches = 0
    while decodes < 50:
        texts = [
            " ".join(rng.choice(words, size=int(rng.integers(3, 22))))
            for _ in range(int(rng.integers(2, 7)))
        ]
        corpus = ingest([{"id": f"d{i}", "text": t} for i, t in enumerate(texts)])
        manager = DocIndexManager(corpus)
        provider = train_provider(corpus, order=2)
        stream, doc_lists = stream_and_docs(corpus)
        for mode in ("corpus", "candidates"):
            config = DecodeConfig(
                constraint_mode=mode, max_clues=2, max_evidence=2,
                min_evidence_tokens=2, answer_budget=3, max_steps=64,
            )
            query = " ".join(rng.choice(words, size=3))
            session = begin_session(query, corpus, manager, config)
            steps = 0
            while not session.finished and steps < config.max_steps:
                if session.constraint_mask() != oracle_mask(session, stream, doc_lists):
                    mismatches += 1
                greedy_step(session, provider)
                steps += 1
                steps_checked += 1
            decodes += 1
    ok = mismatches == 0 and decodes >= 50
    criterion(
        "constraint mask equals the brute-force continuation set at every step of >= 50 decodes",
        ok,
        f"decodes={decodes} steps={steps_checked} mismatches={mismatches}",
    )


# ──────────────────────────────────────────────
# Criterion 6: false-pruning direction at beams 1/3/5 plus curve dip, < 5 min
# ──────────────────────────────────────────────

def test_false_pruning_direction_and_prefix_curves(study_result):
    report, _, elapsed = study_result
    rows = {row["beam_size"]: row for row in report["beam_results"]}
    ok = set(rows) == {1, 3, 5}
    detail = []
    for b in (1, 3, 5):
        row = rows[b]
        ok = ok and row["candidates"] > row["corpus"]
        detail.append(f"beam{b}: {row['corpus']:.2f} < {row['candidates']:.2f}")
    pr = report["prefix_relevance"]
    dip = any(c < g for c, g in zip(pr["corpus"][:13], pr["candidates"][:13]))
    ok = ok and dip and elapsed < 300.0
    criterion(
        "candidate-set constraints beat whole-corpus constraints at beams 1/3/5 and the corpus curve dips within 13 positions",
        ok,
        "; ".join(detail) + f"; dip={dip}; elapsed={elapsed:.1f}s",
    )


# ──────────────────────────────────────────────
# Criterion 8: byte-identical build / query / eval
# ──────────────────────────────────────────────

def test_repeated_runs_are_byte_identical(tmp_path, capsys):
    corpus_path = tmp_path / "corpus.jsonl"
    corpus_path.write_text(
        "".join(json.dumps(d) + "\n" for d in CAPITAL_DOCS), encoding="utf-8"
    )
    examples_path = tmp_path / "examples.jsonl"
    examples_path.write_text(
        "".join(json.dumps(e) + "\n" for e in CAPITAL_EXAMPLES), encoding="utf-8"
    )
    eval_path = tmp_path / "eval.jsonl"
    eval_path.write_text(
        json.dumps({"query": "what is the capital of france", "answers": ["paris"]}) + "\n",
        encoding="utf-8",
    )

    index_bytes = []
    for d in ("a", "b"):
        assert main(["build", "--corpus", str(corpus_path), "--out", str(tmp_path / d)]) == 0
        index_bytes.append(
            {p.name: p.read_bytes() for p in sorted((tmp_path / d).iterdir())}
        )
    assert main(
        ["fit-model", "--index", str(tmp_path / "a"), "--examples", str(examples_path),
         "--out", str(tmp_path / "model.bin")]
    ) == 0
    capsys.readouterr()

    query_argv = ["query", "--index", str(tmp_path / "a"), "--model", str(tmp_path / "model.bin"),
                  "--query", "what is the capital of france"]
    eval_argv = ["eval", "--index", str(tmp_path / "a"), "--model", str(tmp_path / "model.bin"),
                 "--eval", str(eval_path)]
    outs = []
    for argv in (query_argv, query_argv, eval_argv, eval_argv):
        assert main(argv) == 0
        outs.append(capsys.readouterr().out)

    ok = (
        index_bytes[0] == index_bytes[1]
        and outs[0] == outs[1]
        and outs[2] == outs[3]
    )
    criterion(
        "repeated build/query/eval runs with fixed inputs are byte-identical",
        ok,
        f"index_files={len(index_bytes[0])} query_bytes={len(outs[0])} eval_bytes={len(outs[2])}",
    )
