"""Scikit-learn-style facade over ingestion, model fitting, and decoding.

``VerbatimQA`` fits on a document collection and turns queries into grounded
structured outputs (``transform``) or bare answer strings (``predict``).
All decoder knobs are flat constructor parameters so the estimator composes
with ``clone``, ``get_params``/``set_params``, and search utilities.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import DocIndexManager, ingest
from .decoding import DecodeConfig, run_query
from .ngram import DEFAULT_ALPHA, train_provider


def check_documents(X) -> list[dict]:
    """Normalize a document collection to ``{"id", "title", "text"}`` dicts.

    Accepts either mappings with at least ``id`` and ``text`` or bare
    strings, which get positional ids.
    """
    if X is None or isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise ValueError("documents must be an iterable of strings or mappings")
    docs: list[dict] = []
    for i, item in enumerate(X):
        if isinstance(item, str):
            docs.append({"id": f"doc-{i:04d}", "title": "", "text": item})
        elif hasattr(item, "keys"):
            if "text" not in item:
                raise ValueError(f"document {i} has no 'text' field")
            docs.append(
                {
                    "id": str(item.get("id", f"doc-{i:04d}")),
                    "title": str(item.get("title", "")),
                    "text": str(item["text"]),
                }
            )
        else:
            raise ValueError(f"document {i} is neither a string nor a mapping")
    if not docs:
        raise ValueError("documents must be non-empty")
    return docs


def check_queries(X) -> list[str]:
    if isinstance(X, str):
        raise ValueError("queries must be a sequence of strings, not one string")
    if X is None or not hasattr(X, "__iter__"):
        raise ValueError("queries must be a sequence of strings")
    queries = list(X)
    if not queries:
        raise ValueError("queries must be non-empty")
    for i, q in enumerate(queries):
        if not isinstance(q, str) or not q.strip():
            raise ValueError(f"query {i} must be a non-blank string")
    return queries


class VerbatimQA(BaseEstimator):
    """Retrieval-from-generation over an indexed document collection.

    Parameters mirror the decoder configuration plus the n-gram provider's
    ``order``/``alpha`` and the index sampling rate.  ``fit`` builds the
    corpus index and the provider; ``transform`` decodes queries into
    structured outputs; ``predict`` returns just the answers.  There is
    deliberately no ``fit_transform``: fit consumes documents while
    transform consumes queries.
    """

    def __init__(
        self,
        order: int = 3,
        alpha: float = DEFAULT_ALPHA,
        sample_rate: int | None = None,
        max_clues: int = 5,
        max_evidence: int = 5,
        min_evidence_tokens: int = 4,
        top_aux: int = 8,
        top_gen: int = 20,
        top_lex: int = 20,
        num_candidates: int = 10,
        weight_generated: float = 1.0,
        weight_lexical: float = 2.0,
        window_context: int = 32,
        window_max_len: int = 96,
        future_weight: float = 100.0,
        answer_budget: int = 64,
        max_steps: int = 512,
        constraint_mode: str = "candidates",
        num_beams: int = 1,
        num_beam_groups: int = 0,
        diversity_penalty: float = 1.0,
    ):
        self.order = order
        self.alpha = alpha
        self.sample_rate = sample_rate
        self.max_clues = max_clues
        self.max_evidence = max_evidence
        self.min_evidence_tokens = min_evidence_tokens
        self.top_aux = top_aux
        self.top_gen = top_gen
        self.top_lex = top_lex
        self.num_candidates = num_candidates
        self.weight_generated = weight_generated
        self.weight_lexical = weight_lexical
        self.window_context = window_context
        self.window_max_len = window_max_len
        self.future_weight = future_weight
        self.answer_budget = answer_budget
        self.max_steps = max_steps
        self.constraint_mode = constraint_mode
        self.num_beams = num_beams
        self.num_beam_groups = num_beam_groups
        self.diversity_penalty = diversity_penalty

    def _config(self) -> DecodeConfig:
        params = self.get_params()
        for extra in ("order", "alpha", "sample_rate"):
            params.pop(extra)
        return DecodeConfig(**params).validate()

    def fit(self, X, y=None, examples=None):
        """Index documents and fit the logit provider.

        ``examples`` optionally carries structured training examples
        (``{"query", "clues", "evidences", "answer"}``) that teach the
        provider the stage protocol.
        """
        docs = check_documents(X)
        config = self._config()  # validate decoder params eagerly
        if self.order < 1:
            raise ValueError("order must be >= 1")
        self.corpus_ = ingest(docs, sample_rate=self.sample_rate)
        self.manager_ = DocIndexManager(self.corpus_, sample_rate=self.sample_rate)
        self.model_ = train_provider(
            self.corpus_, examples or (), order=self.order, alpha=self.alpha
        )
        self.config_ = config
        return self

    def transform(self, X) -> list[dict]:
        """Decode queries into structured outputs with grounded evidence."""
        check_is_fitted(self, "corpus_")
        queries = check_queries(X)
        return [
            run_query(q, self.corpus_, self.manager_, self.model_, self.config_)
            for q in queries
        ]

    def predict(self, X) -> list[str]:
        """Decode queries and return only the answer strings."""
        return [out["answer"] for out in self.transform(X)]
