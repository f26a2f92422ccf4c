"""Clue-driven candidate ranking.

Two ranked lists are produced per query and fused by weighted reciprocal
rank:

* the *generated* list scores documents by emitted clue spans, each clue
  weighted ``ln(N/cf) + ln(N/df)`` and contributing ``weight · ln(1+tf)``
  per document;
* the *lexical* list scores documents from query terms through a pluggable
  term weigher (default: query-count × ln(N/df)).

All logarithms are natural.  Every ranked list is strictly ordered by
(score desc, doc_id asc), so each document has exactly one rank.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import ClueStats, CorpusIndex, clue_stats

GENERATED = "generated"
AUXILIARY = "auxiliary"


@dataclass(frozen=True)
class Clue:
    """A corpus-grounded span used for ranking and window location."""

    tokens: tuple[int, ...]
    source: str  # GENERATED or AUXILIARY
    weight: float


class RankedList:
    """Document ranking with 1-based rank lookup."""

    def __init__(self, entries: Iterable[tuple[int, float]]):
        self.entries = list(entries)
        self._rank = {doc_id: i + 1 for i, (doc_id, _) in enumerate(self.entries)}
        if len(self._rank) != len(self.entries):
            raise ValueError("ranked list contains a duplicate document")

    def rank_of(self, doc_id: int) -> int | None:
        return self._rank.get(doc_id)

    def doc_ids(self) -> list[int]:
        return [doc_id for doc_id, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class CandidateSet:
    """Fused top documents, in rank order, with their fused scores."""

    doc_ids: tuple[int, ...]
    scores: Mapping[int, float]


def _take_ranked(scores: Mapping[int, float], k: int) -> RankedList:
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return RankedList(ordered[:k])


# ──────────────────────────────────────────────
# Generated-clue scoring
# ──────────────────────────────────────────────

def clue_weight(stats: ClueStats, n_docs: int) -> float:
    """Rarity weight ``ln(N/cf) + ln(N/df)`` of a corpus-present clue."""
    if stats.cf < 1 or stats.df < 1:
        raise ValueError("clue weight is undefined for an absent clue")
    return math.log(n_docs / stats.cf) + math.log(n_docs / stats.df)


def clue_doc_score(stats: ClueStats, doc_id: int) -> float:
    """Saturating per-document contribution ``ln(1 + tf)``."""
    return math.log1p(stats.tf.get(doc_id, 0))


def score_documents(
    clues: Sequence[Clue],
    corpus: CorpusIndex,
    k: int,
    stats_map: Mapping[tuple[int, ...], ClueStats] | None = None,
) -> RankedList:
    """Rank documents containing at least one clue by summed weighted scores."""
    if k <= 0:
        raise ValueError("k must be positive")
    scores: dict[int, float] = {}
    for clue in clues:
        stats = stats_map.get(clue.tokens) if stats_map is not None else None
        if stats is None:
            stats = clue_stats(corpus, clue.tokens)
        for doc_id, tf in stats.tf.items():
            scores[doc_id] = scores.get(doc_id, 0.0) + clue.weight * math.log1p(tf)
    return _take_ranked(scores, k)


# ──────────────────────────────────────────────
# Lexical scoring
# ──────────────────────────────────────────────

class LexicalWeigher(Protocol):
    """Plug-in that assigns weights to query content tokens."""

    def weigh(self, query_token_ids: Sequence[int], corpus: CorpusIndex) -> dict[int, float]: ...


class DefaultLexicalWeigher:
    """query-count × ln(N/df); terms with non-positive weight are dropped.

    A term appearing in every document gets ln(1) = 0 and therefore never
    becomes an auxiliary clue nor contributes to the lexical ranking.
    """

    def weigh(self, query_token_ids: Sequence[int], corpus: CorpusIndex) -> dict[int, float]:
        counts = Counter(int(t) for t in query_token_ids)
        n = corpus.n_docs
        out: dict[int, float] = {}
        for token_id, c in counts.items():
            df = clue_stats(corpus, [token_id]).df
            if df == 0:
                continue
            w = c * math.log(n / df)
            if w > 0:
                out[token_id] = w
        return out


def auxiliary_clues(
    query_token_ids: Sequence[int],
    corpus: CorpusIndex,
    weigher: LexicalWeigher | None = None,
    k: int = 8,
) -> list[Clue]:
    """Top-k single-token clues expanded from the query by term weight."""
    if k <= 0:
        raise ValueError("k must be positive")
    weigher = weigher or DefaultLexicalWeigher()
    weights = weigher.weigh(query_token_ids, corpus)
    ordered = sorted(weights.items(), key=lambda item: (-item[1], item[0]))
    return [Clue((token_id,), AUXILIARY, w) for token_id, w in ordered[:k]]


def lexical_rank(
    query_token_ids: Sequence[int],
    corpus: CorpusIndex,
    weigher: LexicalWeigher | None = None,
    k: int = 20,
) -> RankedList:
    """Rank documents by ``Σ_term weight(term) · ln(1 + tf(term, doc))``."""
    if k <= 0:
        raise ValueError("k must be positive")
    weigher = weigher or DefaultLexicalWeigher()
    weights = weigher.weigh(query_token_ids, corpus)
    scores: dict[int, float] = {}
    for token_id, w in weights.items():
        for doc_id, tf in clue_stats(corpus, [token_id]).tf.items():
            scores[doc_id] = scores.get(doc_id, 0.0) + w * math.log1p(tf)
    return _take_ranked(scores, k)


# ──────────────────────────────────────────────
# Fusion
# ──────────────────────────────────────────────

def fuse(
    generated: RankedList,
    lexical: RankedList,
    weight_generated: float = 1.0,
    weight_lexical: float = 2.0,
    k: int = 10,
) -> CandidateSet:
    """Weighted reciprocal-rank fusion of the two ranked lists.

    ``S(d) = w_gen/rank_gen(d) + w_lex/rank_lex(d)``, a missing rank
    contributing zero.  Ties break toward the smaller doc_id.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    fused: dict[int, float] = {}
    for ranked, w in ((generated, weight_generated), (lexical, weight_lexical)):
        for doc_id, _ in ranked:
            r = ranked.rank_of(doc_id)
            fused[doc_id] = fused.get(doc_id, 0.0) + w / r
    ordered = sorted(fused.items(), key=lambda item: (-item[1], item[0]))[:k]
    return CandidateSet(
        doc_ids=tuple(doc_id for doc_id, _ in ordered),
        scores={doc_id: s for doc_id, s in ordered},
    )
