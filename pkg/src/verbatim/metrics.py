"""Retrieval and answer metrics for batch evaluation.

A retrieval "hit" is defined at evidence granularity: an emitted evidence
span counts as a hit when, after lowercasing and whitespace normalization,
it contains any gold answer string.  The same containment rule scores the
final answer text.
"""

from __future__ import annotations

HIT_DEFINITION = (
    "evidence contains a gold answer string after lowercasing "
    "and whitespace normalization"
)


def normalize(text: str) -> str:
    """Lowercase and collapse all whitespace runs to single spaces."""
    return " ".join(text.lower().split())


def contains_answer(text: str, answers: list[str]) -> bool:
    hay = normalize(text)
    return any(normalize(a) and normalize(a) in hay for a in answers)


def evidence_hit(evidence_texts: list[str], answers: list[str], k: int) -> bool:
    """True when any of the first k evidence spans contains a gold answer."""
    return any(contains_answer(t, answers) for t in evidence_texts[:k])


def evaluate(outputs: list[dict], records: list[dict], ks: tuple[int, ...] = (1, 5)) -> dict:
    """Score decoded outputs against gold records.

    Each record carries ``query``, ``answers`` (non-empty list), and
    optionally ``gold_doc_ids``.  Outputs are the structured dicts produced
    by the decoder, matched to records by position.
    """
    if not records:
        raise ValueError("evaluation requires at least one record")
    if len(outputs) != len(records):
        raise ValueError(
            f"got {len(outputs)} outputs for {len(records)} records"
        )
    for i, rec in enumerate(records):
        if not rec.get("answers"):
            raise ValueError(f"record {i} has no gold answers")

    n = len(records)
    recall = {k: 0 for k in ks}
    answer_correct = 0
    total_evidence = 0
    input_tokens = 0
    output_tokens = 0
    for out, rec in zip(outputs, records):
        texts = [e["text"] for e in out["evidence"]]
        answers = rec["answers"]
        for k in ks:
            recall[k] += evidence_hit(texts, answers, k)
        answer_correct += contains_answer(out["answer"], answers)
        total_evidence += len(texts)
        input_tokens += out["diagnostics"]["input_tokens"]
        output_tokens += out["diagnostics"]["output_tokens"]

    report = {
        "hit_definition": HIT_DEFINITION,
        "queries": n,
        "num_evidence_mean": total_evidence / n,
        "answer_accuracy": answer_correct / n,
        "tokens": {
            "input_mean": input_tokens / n,
            "output_mean": output_tokens / n,
            "total_mean": (input_tokens + output_tokens) / n,
        },
    }
    for k in sorted(recall):
        report[f"recall_at_{k}"] = recall[k] / n
    return report
