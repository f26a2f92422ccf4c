"""Deterministic n-gram logits provider.

A small interpolated n-gram model stands in for a neural decoder: fit on the
corpus document streams plus *formatted examples* — token streams laid out in
the decode protocol (query, clue section, evidence section, answer, eos) — it
supplies the raw logits that the constrained decoder masks and adjusts.

Probabilities are an even mixture over orders 1..K of additively smoothed
conditionals::

    P_k(t | c) = (count(c·t) + α) / (count(c·*) + α·V)        (α = 0.01)

so every distribution is strictly positive and sums to one; ``logits`` returns
float64 natural-log probabilities over the extended vocabulary (corpus ids
plus decode-control ids).  Casting to float32 is left to the decoder boundary.
Fitting and scoring are fully deterministic.
"""

from __future__ import annotations

import json
from collections import Counter
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np

from . import binio
from .corpus import Tokenizer, SimpleTokenizer, Vocabulary
from .decoding import SpecialTokens

MAGIC = b"RNGM"
FORMAT_VERSION = 1
DEFAULT_ALPHA = 0.01


class NgramProvider:
    """Interpolated additive-smoothing n-gram model over token ids."""

    def __init__(self, order: int = 3, alpha: float = DEFAULT_ALPHA, extended_size: int = 0):
        if order < 1:
            raise ValueError("order must be >= 1")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.order = order
        self.alpha = alpha
        self.extended_size = extended_size
        # _tables[m] maps a length-m context tuple to a successor Counter.
        self._tables: list[dict[tuple[int, ...], Counter]] = [{} for _ in range(order)]

    def fit(self, sequences: Iterable[Sequence[int]]) -> "NgramProvider":
        """Count n-grams of every order over the given token sequences."""
        top = 0
        for seq in sequences:
            toks = [int(t) for t in seq]
            if toks:
                top = max(top, max(toks))
            for i, t in enumerate(toks):
                for m in range(self.order):
                    if i >= m:
                        ctx = tuple(toks[i - m : i])
                        table = self._tables[m]
                        succ = table.get(ctx)
                        if succ is None:
                            succ = table[ctx] = Counter()
                        succ[t] += 1
        if self.extended_size == 0:
            self.extended_size = top + 1
        elif top >= self.extended_size:
            raise ValueError(f"token {top} outside declared vocabulary {self.extended_size}")
        return self

    def logits(self, context: Sequence[int]) -> np.ndarray:
        """Float64 log-probabilities for the next token given ``context``."""
        if self.extended_size < 1:
            raise RuntimeError("provider is not fitted")
        ctx = [int(t) for t in context]
        v = self.extended_size
        probs = np.zeros(v, dtype=np.float64)
        for m in range(self.order):
            succ = None
            if len(ctx) >= m:
                succ = self._tables[m].get(tuple(ctx[len(ctx) - m :]) if m else ())
            if succ:
                total = sum(succ.values())
                denom = total + self.alpha * v
                component = np.full(v, self.alpha / denom, dtype=np.float64)
                for t, c in succ.items():
                    component[t] += c / denom
                probs += component
            else:
                probs += 1.0 / v  # unseen context: the smoothed limit, uniform
        probs /= self.order
        return np.log(probs)

    # ── persistence ──

    def save(self, fh: BinaryIO) -> None:
        tables = []
        for table in self._tables:
            tables.append(
                {
                    ",".join(map(str, ctx)): {str(t): c for t, c in succ.items()}
                    for ctx, succ in table.items()
                }
            )
        payload = json.dumps(
            {
                "alpha": self.alpha,
                "extended_size": self.extended_size,
                "order": self.order,
                "tables": tables,
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        binio.write_magic(fh, MAGIC, FORMAT_VERSION)
        binio.write_u64(fh, len(payload))
        fh.write(payload)

    @classmethod
    def load(cls, fh: BinaryIO) -> "NgramProvider":
        binio.read_magic(fh, MAGIC, FORMAT_VERSION)
        size = binio.read_u64(fh)
        payload = json.loads(fh.read(size).decode("utf-8"))
        model = cls(payload["order"], payload["alpha"], payload["extended_size"])
        for m, table in enumerate(payload["tables"]):
            dst = model._tables[m]
            for key, succ in table.items():
                ctx = tuple(int(x) for x in key.split(",")) if key else ()
                dst[ctx] = Counter({int(t): int(c) for t, c in succ.items()})
        return model


# ──────────────────────────────────────────────
# Protocol-formatted training streams
# ──────────────────────────────────────────────

def format_example(
    example: Mapping[str, object],
    vocab: Vocabulary,
    specials: SpecialTokens,
    tokenizer: Tokenizer | None = None,
) -> list[int]:
    """Lay out one ``{query, clues, evidences, answer}`` example as a token
    stream in decode-protocol order."""
    tokenizer = tokenizer or SimpleTokenizer()

    def encode(text: object) -> list[int]:
        return vocab.encode_known(tokenizer.split(str(text)))

    stream = encode(example.get("query", ""))
    stream.append(specials.clue_open)
    for i, clue in enumerate(example.get("clues", ())):
        if i:
            stream.append(specials.span_sep)
        stream.extend(encode(clue))
    stream.append(specials.clue_close)
    stream.append(specials.evidence_open)
    for i, evidence in enumerate(example.get("evidences", ())):
        if i:
            stream.append(specials.span_sep)
        stream.extend(encode(evidence))
    stream.append(specials.evidence_close)
    stream.extend(encode(example.get("answer", "")))
    stream.append(specials.eos)
    return stream


def train_provider(
    corpus,
    examples: Iterable[Mapping[str, object]] = (),
    order: int = 3,
    alpha: float = DEFAULT_ALPHA,
    tokenizer: Tokenizer | None = None,
) -> NgramProvider:
    """Fit a provider on corpus document streams plus formatted examples."""
    specials = SpecialTokens.for_vocab(corpus.vocab.size)
    sequences: list[list[int]] = [
        corpus.doc_tokens(i).tolist() for i in range(corpus.n_docs)
    ]
    for ex in examples:
        sequences.append(format_example(ex, corpus.vocab, specials, tokenizer))
    return NgramProvider(order, alpha, specials.extended_size).fit(sequences)
