"""Metric arithmetic: normalization, containment hits, recall, token means."""

import pytest

from verbatim.metrics import (
    HIT_DEFINITION,
    contains_answer,
    evaluate,
    evidence_hit,
    normalize,
)


def output(evidence_texts, answer, in_tok=10, out_tok=20):
    return {
        "evidence": [{"text": t} for t in evidence_texts],
        "answer": answer,
        "diagnostics": {"input_tokens": in_tok, "output_tokens": out_tok},
    }


def record(query="q", answers=("gold",)):
    return {"query": query, "answers": list(answers)}


class TestNormalization:
    def test_lowercase_and_whitespace_collapse(self):
        assert normalize("  The   Capital\tCity \n") == "the capital city"

    def test_containment_is_normalized_both_sides(self):
        assert contains_answer("The Capital is  PARIS", ["paris"])
        assert contains_answer("the capital is paris", ["  PARIS "])
        assert not contains_answer("the capital is paris", ["london"])

    def test_empty_gold_string_never_matches(self):
        assert not contains_answer("anything", [""])


class TestEvidenceHit:
    def test_only_first_k_spans_count(self):
        texts = ["nothing here", "the answer is gold"]
        assert not evidence_hit(texts, ["gold"], k=1)
        assert evidence_hit(texts, ["gold"], k=2)

    def test_any_gold_suffices(self):
        assert evidence_hit(["silver lining"], ["gold", "silver"], k=1)


class TestEvaluate:
    def test_perfect_fixture_scores_one(self):
        outs = [output(["x gold y"], "gold"), output(["gold star"], "the gold")]
        recs = [record(), record()]
        rep = evaluate(outs, recs)
        assert rep["recall_at_1"] == 1.0
        assert rep["recall_at_5"] == 1.0
        assert rep["answer_accuracy"] == 1.0
        assert rep["hit_definition"] == HIT_DEFINITION

    def test_no_evidence_means_zero_recall_and_num(self):
        rep = evaluate([output([], "nope")], [record()])
        assert rep["recall_at_1"] == 0.0
        assert rep["recall_at_5"] == 0.0
        assert rep["num_evidence_mean"] == 0.0
        assert rep["answer_accuracy"] == 0.0

    def test_recall_at_one_never_exceeds_recall_at_five(self):
        outs = [
            output(["miss", "gold here"], "x"),
            output(["gold first"], "x"),
            output(["miss", "miss"], "x"),
        ]
        recs = [record(), record(), record()]
        rep = evaluate(outs, recs)
        assert rep["recall_at_1"] <= rep["recall_at_5"]
        assert rep["recall_at_1"] == pytest.approx(1 / 3)
        assert rep["recall_at_5"] == pytest.approx(2 / 3)

    def test_num_is_mean_evidence_count(self):
        outs = [output(["a", "b", "c"], "x"), output(["a"], "x")]
        rep = evaluate(outs, [record(), record()])
        assert rep["num_evidence_mean"] == 2.0

    def test_token_means(self):
        outs = [output([], "x", 10, 30), output([], "x", 20, 10)]
        rep = evaluate(outs, [record(), record()])
        assert rep["tokens"] == {"input_mean": 15.0, "output_mean": 20.0, "total_mean": 35.0}

    def test_empty_eval_set_rejected(self):
        with pytest.raises(ValueError):
            evaluate([], [])

    def test_record_without_answers_rejected(self):
        with pytest.raises(ValueError):
            evaluate([output([], "x")], [{"query": "q", "answers": []}])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            evaluate([output([], "x")], [record(), record()])
