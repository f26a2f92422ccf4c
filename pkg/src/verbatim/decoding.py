"""Stage-constrained decoding.

A session walks a fixed protocol::

    clue_open (clue (sep clue)*)? clue_close
    evidence_open (evidence (sep evidence)*)? evidence_close
    answer… [eos]

During the clue stage every content token must extend a span that exists
somewhere in the corpus (checked on the reversed corpus index, one
``backward_step`` per appended token).  Closing the clue stage ranks candidate
documents (generated-clue scores fused with a lexical ranking) and locates
*future windows* — clue-anchored spans inside the candidates.  During the
evidence stage continuations are restricted to the candidate documents (or to
the whole corpus in ``corpus`` constraint mode), and window relevance is added
to the raw logits so the greedy path is pulled toward spans that can still pay
off later.  The answer stage is unconstrained except for an explicit
end-of-sequence id and a token budget.

Logit adjustment works in float32 throughout: masked-out entries hold the
float32 minimum as an explicit sentinel, masked-in entries are the raw values
plus (for evidence continuations) ``future_weight ×`` the best relevance among
windows whose alignment cursors still match the emitted span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Mapping, Protocol, Sequence

import numpy as np

from .corpus import FIRST_CONTENT_ID, CorpusIndex, DocIndexManager, SimpleTokenizer, clue_stats
from .fmindex import SearchInterval
from .ranking import (
    GENERATED,
    CandidateSet,
    Clue,
    LexicalWeigher,
    RankedList,
    auxiliary_clues,
    clue_weight,
    fuse,
    lexical_rank,
    score_documents,
)

MASK_SENTINEL = float(np.finfo(np.float32).min)

CONSTRAIN_CANDIDATES = "candidates"
CONSTRAIN_CORPUS = "corpus"


class ConstraintViolation(ValueError):
    """A token outside the current constraint mask was fed to the session."""


class SessionFinished(RuntimeError):
    """The session already emitted its end state and cannot advance."""


# ──────────────────────────────────────────────
# Protocol vocabulary
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class SpecialTokens:
    """Decode-control ids appended after the corpus vocabulary."""

    clue_open: int
    clue_close: int
    span_sep: int
    evidence_open: int
    evidence_close: int
    eos: int

    @classmethod
    def for_vocab(cls, vocab_size: int) -> "SpecialTokens":
        return cls(*(vocab_size + i for i in range(6)))

    @property
    def extended_size(self) -> int:
        return self.eos + 1

    def structural(self) -> frozenset[int]:
        """The five protocol ids; eos is excluded (it is answer content)."""
        return frozenset(
            (self.clue_open, self.clue_close, self.span_sep, self.evidence_open, self.evidence_close)
        )


class Stage(Enum):
    CLUE = "clue"
    EVIDENCE = "evidence"
    ANSWER = "answer"


# ──────────────────────────────────────────────
# Configuration
# ──────────────────────────────────────────────

@dataclass
class DecodeConfig:
    """Decoding hyperparameters; validated before a session starts."""

    max_clues: int = 5
    max_evidence: int = 5
    min_evidence_tokens: int = 4
    top_aux: int = 8
    top_gen: int = 20
    top_lex: int = 20
    num_candidates: int = 10
    weight_generated: float = 1.0
    weight_lexical: float = 2.0
    window_context: int = 32
    window_max_len: int = 96
    future_weight: float = 100.0
    answer_budget: int = 64
    max_steps: int = 512
    constraint_mode: str = CONSTRAIN_CANDIDATES
    num_beams: int = 1
    num_beam_groups: int = 0  # 0 -> one group per beam
    diversity_penalty: float = 1.0

    def validate(self) -> "DecodeConfig":
        positive = (
            "max_clues", "max_evidence", "top_aux", "top_gen", "top_lex",
            "num_candidates", "answer_budget", "max_steps", "num_beams",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.min_evidence_tokens < 1:
            raise ValueError("min_evidence_tokens must be >= 1")
        if self.window_context < 0 or self.window_max_len < 1:
            raise ValueError("window sizes must be positive")
        if self.future_weight < 0:
            raise ValueError("future_weight must be non-negative")
        if self.constraint_mode not in (CONSTRAIN_CANDIDATES, CONSTRAIN_CORPUS):
            raise ValueError(f"unknown constraint_mode {self.constraint_mode!r}")
        groups = self.num_beam_groups or self.num_beams
        if groups < 1 or self.num_beams % groups != 0:
            raise ValueError("num_beam_groups must divide num_beams")
        if self.diversity_penalty < 0:
            raise ValueError("diversity_penalty must be non-negative")
        return self

    def replace(self, **overrides) -> "DecodeConfig":
        params = {f.name: getattr(self, f.name) for f in fields(self)}
        params.update(overrides)
        return DecodeConfig(**params)

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_mapping(cls, values: dict) -> "DecodeConfig":
        """Build a config from a plain dict, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values).validate()


# ──────────────────────────────────────────────
# Windows and evidence
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class FutureWindow:
    """A clue-anchored span of a candidate document with a static relevance."""

    doc_id: int
    start: int
    tokens: tuple[int, ...]
    score: float


@dataclass(frozen=True)
class Evidence:
    doc_id: int
    start: int
    tokens: tuple[int, ...]


class WindowScorer(Protocol):
    """Plug-in mapping (window tokens, query tokens) to a relevance in [0, 1]."""

    def score(self, window_tokens: Sequence[int], query_token_ids: Sequence[int]) -> float: ...


class TermOverlapScorer:
    """Fraction of distinct query terms present in the window."""

    def score(self, window_tokens: Sequence[int], query_token_ids: Sequence[int]) -> float:
        query = set(int(t) for t in query_token_ids)
        if not query:
            return 0.0
        return len(query & set(int(t) for t in window_tokens)) / len(query)


def merge_windows(spans: Sequence[tuple[int, int]], max_len: int) -> list[tuple[int, int]]:
    """Merge overlapping half-open spans unless the union would exceed max_len."""
    merged: list[tuple[int, int]] = []
    for s, e in sorted(spans):
        if merged:
            ps, pe = merged[-1]
            if s < pe and max(e, pe) - ps <= max_len:
                merged[-1] = (ps, max(pe, e))
                continue
        merged.append((s, e))
    return merged


class LogitsProvider(Protocol):
    """Anything that maps a token context to logits over the extended vocab."""

    def logits(self, context: Sequence[int]) -> np.ndarray: ...


# ──────────────────────────────────────────────
# The session
# ──────────────────────────────────────────────

class DecodeSession:
    """Mutable state of one constrained decode.

    The session never selects tokens: callers fetch the constraint mask or
    adjusted logits, pick a token by whatever policy they like, and feed it
    back through :meth:`advance`.
    """

    def __init__(
        self,
        *,
        corpus: CorpusIndex,
        manager: DocIndexManager,
        config: DecodeConfig,
        specials: SpecialTokens,
        query_text: str,
        query_tokens: list[int],
        aux_clues: list[Clue],
        lexical_list: RankedList,
        scorer: WindowScorer,
    ):
        self.corpus = corpus
        self.manager = manager
        self.config = config
        self.specials = specials
        self.query_text = query_text
        self.query_tokens = query_tokens
        self.stage = Stage.CLUE
        self.finished = False
        self.emitted: list[int] = []
        self.clue_opened = False
        self.evidence_opened = False
        self.clues: list[tuple[int, ...]] = []
        self.generated_clues: list[Clue] = []
        self.candidates: CandidateSet | None = None
        self.ranked_generated: RankedList | None = None
        self.windows: list[FutureWindow] = []
        self.evidences: list[Evidence] = []
        self.answer_tokens: list[int] = []
        self.diagnostics: dict = {"forced_closes": 0}
        self._aux_clues = aux_clues
        self._lexical_list = lexical_list
        self._scorer = scorer
        self._cur_clue: list[int] = []
        self._cur_evidence: list[int] = []
        self._clue_interval = corpus.reverse.full_interval()
        self._doc_intervals: dict[int, SearchInterval] = {}
        self._corpus_interval: SearchInterval | None = None
        self._window_cursors: list[set[int]] = []
        self._mask_step = -1
        self._mask_cache: set[int] = set()

    # ── public views ──

    def context(self) -> list[int]:
        """Token context a provider conditions on: query then emitted stream."""
        return self.query_tokens + self.emitted

    @property
    def aux_clues(self) -> list[Clue]:
        return list(self._aux_clues)

    @property
    def current_clue(self) -> tuple[int, ...]:
        return tuple(self._cur_clue)

    @property
    def current_evidence(self) -> tuple[int, ...]:
        return tuple(self._cur_evidence)

    @property
    def active_docs(self) -> list[int]:
        """Candidate documents still matching the current evidence span."""
        return sorted(self._doc_intervals)

    # ── constraint mask ──

    def constraint_mask(self) -> set[int]:
        """Token ids legal at the next step (computed once per step)."""
        if self.finished:
            raise SessionFinished("session is finished; no further steps")
        if self._mask_step != len(self.emitted):
            self._mask_cache = self._compute_mask()
            self._mask_step = len(self.emitted)
        return set(self._mask_cache)

    def _compute_mask(self) -> set[int]:
        sp = self.specials
        if self.stage is Stage.ANSWER:
            # Unconstrained free generation: the full extended vocabulary.
            return set(range(sp.extended_size))
        if self.stage is Stage.CLUE:
            if not self.clue_opened:
                return {sp.clue_open}
            if len(self.clues) >= self.config.max_clues:
                return {sp.clue_close}
            mask = self._content_ids(self.corpus.reverse.allowed_next(self._clue_interval))
            if self._cur_clue:
                if len(self.clues) + 1 < self.config.max_clues:
                    mask.add(sp.span_sep)
                mask.add(sp.clue_close)
            elif not self.clues:
                mask.add(sp.clue_close)
            if not mask:
                self.diagnostics["forced_closes"] += 1
                return {sp.clue_close}
            return mask
        # evidence stage
        if not self.evidence_opened:
            return {sp.evidence_open}
        if len(self.evidences) >= self.config.max_evidence:
            return {sp.evidence_close}
        mask = self._evidence_content_ids()
        if len(self._cur_evidence) >= self.config.min_evidence_tokens:
            if len(self.evidences) + 1 < self.config.max_evidence:
                mask.add(sp.span_sep)
            mask.add(sp.evidence_close)
        elif not self._cur_evidence and not self.evidences:
            mask.add(sp.evidence_close)
        if not mask:
            self.diagnostics["forced_closes"] += 1
            return {sp.evidence_close}
        return mask

    @staticmethod
    def _content_ids(allowed: Mapping[int, SearchInterval]) -> set[int]:
        return {s for s in allowed if s >= FIRST_CONTENT_ID}

    def _evidence_content_ids(self) -> set[int]:
        if self.config.constraint_mode == CONSTRAIN_CORPUS:
            assert self._corpus_interval is not None
            return self._content_ids(self.corpus.reverse.allowed_next(self._corpus_interval))
        out: set[int] = set()
        for doc_id, iv in self._doc_intervals.items():
            out |= self._content_ids(self.manager.get(doc_id).reverse.allowed_next(iv))
        return out

    # ── logit adjustment ──

    def adjust_logits(self, raw: np.ndarray) -> np.ndarray:
        """Mask raw logits to the constraint set and add window relevance.

        Returns float32.  Entries outside the mask hold the float32 minimum
        sentinel; masked-in entries are raw (cast to float32) plus
        ``future_weight × best window relevance`` when some window's alignment
        cursor continues the current evidence span with that token.
        """
        raw = np.asarray(raw)
        if raw.shape != (self.specials.extended_size,):
            raise ValueError(
                f"expected logits of shape ({self.specials.extended_size},), got {raw.shape}"
            )
        if not np.all(np.isfinite(raw)):
            raise ValueError("provider logits must be finite")
        raw32 = raw.astype(np.float32)
        if self.stage is Stage.ANSWER:
            return raw32  # unconstrained stage: raw logits pass through
        mask = self.constraint_mask()
        out = np.full(self.specials.extended_size, MASK_SENTINEL, dtype=np.float32)
        for t in mask:
            out[t] = raw32[t]
        if self.stage is Stage.EVIDENCE and self.evidence_opened and self.windows:
            best: dict[int, float] = {}
            k = len(self._cur_evidence)
            for w, cursors in zip(self.windows, self._window_cursors):
                if not cursors:
                    continue
                tokens = w.tokens
                limit = len(tokens)
                for o in cursors:
                    nxt = o + k
                    if nxt < limit:
                        t = tokens[nxt]
                        if t in mask and best.get(t, -1.0) < w.score:
                            best[t] = w.score
            lam = np.float32(self.config.future_weight)
            for t, s in best.items():
                out[t] = raw32[t] + lam * np.float32(s)
        return out

    # ── state transitions ──

    def advance(self, token: int) -> None:
        """Feed the selected token; enforces the mask and moves the machine."""
        token = int(token)
        mask = self.constraint_mask()
        if token not in mask:
            raise ConstraintViolation(
                f"token {token} is outside the {self.stage.value}-stage constraint"
            )
        self.emitted.append(token)
        sp = self.specials
        if self.stage is Stage.CLUE:
            if token == sp.clue_open:
                self.clue_opened = True
            elif token == sp.span_sep:
                self._finish_clue()
            elif token == sp.clue_close:
                self._finish_clue()
                self._enter_evidence_stage()
            else:
                self._cur_clue.append(token)
                self._clue_interval = self.corpus.reverse.backward_step(self._clue_interval, token)
        elif self.stage is Stage.EVIDENCE:
            if token == sp.evidence_open:
                self.evidence_opened = True
                self._reset_evidence_span()
            elif token == sp.span_sep:
                self._finish_evidence()
                self._reset_evidence_span()
            elif token == sp.evidence_close:
                self._finish_evidence()
                self.stage = Stage.ANSWER
            else:
                self._advance_window_cursors(token)
                self._cur_evidence.append(token)
                self._step_evidence_intervals(token)
        else:  # answer
            if token == sp.eos:
                self.finished = True
            else:
                self.answer_tokens.append(token)
                if len(self.answer_tokens) >= self.config.answer_budget:
                    self.finished = True

    def _finish_clue(self) -> None:
        if self._cur_clue:
            self.clues.append(tuple(self._cur_clue))
            self._cur_clue = []
        self._clue_interval = self.corpus.reverse.full_interval()

    def _enter_evidence_stage(self) -> None:
        self.stage = Stage.EVIDENCE
        cfg = self.config
        if cfg.constraint_mode == CONSTRAIN_CORPUS:
            return
        stats_map = {}
        gen: list[Clue] = []
        for span in dict.fromkeys(self.clues):  # order-preserving dedupe
            stats = clue_stats(self.corpus, span)
            if stats.cf < 1:
                continue  # unreachable under the constraint; guards misuse
            stats_map[span] = stats
            gen.append(Clue(span, GENERATED, clue_weight(stats, self.corpus.n_docs)))
        self.generated_clues = gen
        self.ranked_generated = score_documents(gen, self.corpus, cfg.top_gen, stats_map)
        self.candidates = fuse(
            self.ranked_generated,
            self._lexical_list,
            cfg.weight_generated,
            cfg.weight_lexical,
            cfg.num_candidates,
        )
        self._locate_windows()

    def _locate_windows(self) -> None:
        assert self.candidates is not None
        cfg = self.config
        spans_by_clue = [c.tokens for c in self.generated_clues]
        spans_by_clue += [c.tokens for c in self._aux_clues]
        all_spans = list(dict.fromkeys(s for s in spans_by_clue if s))
        windows: list[FutureWindow] = []
        for doc_id in self.candidates.doc_ids:
            doc = self.manager.get(doc_id)
            doc_len = int(doc.tokens.size)
            raw_spans: list[tuple[int, int]] = []
            for span in all_spans:
                if len(span) > doc_len:
                    continue
                for pos in doc.forward.locate(list(span)):
                    s = max(0, pos - cfg.window_context)
                    e = min(doc_len, pos + len(span) + cfg.window_context)
                    if e - s > cfg.window_max_len:
                        e = s + cfg.window_max_len
                    raw_spans.append((s, e))
            for s, e in merge_windows(raw_spans, cfg.window_max_len):
                tokens = tuple(int(t) for t in doc.tokens[s:e])
                score = self._scorer.score(tokens, self.query_tokens)
                windows.append(FutureWindow(doc_id, s, tokens, score))
        self.windows = windows
        self._window_cursors = [set() for _ in windows]

    def _reset_evidence_span(self) -> None:
        if self.config.constraint_mode == CONSTRAIN_CORPUS:
            self._corpus_interval = self.corpus.reverse.full_interval()
        else:
            doc_ids = self.candidates.doc_ids if self.candidates else ()
            self._doc_intervals = {
                d: self.manager.get(d).reverse.full_interval() for d in doc_ids
            }
        self._cur_evidence = []
        self._window_cursors = [set(range(len(w.tokens))) for w in self.windows]

    def _step_evidence_intervals(self, token: int) -> None:
        if self.config.constraint_mode == CONSTRAIN_CORPUS:
            assert self._corpus_interval is not None
            self._corpus_interval = self.corpus.reverse.backward_step(self._corpus_interval, token)
            return
        survivors: dict[int, SearchInterval] = {}
        for doc_id, iv in self._doc_intervals.items():
            nxt = self.manager.get(doc_id).reverse.backward_step(iv, token)
            if not nxt.is_empty:
                survivors[doc_id] = nxt
        self._doc_intervals = survivors

    def _advance_window_cursors(self, token: int) -> None:
        k = len(self._cur_evidence)
        for i, w in enumerate(self.windows):
            cursors = self._window_cursors[i]
            if not cursors:
                continue
            tokens = w.tokens
            limit = len(tokens)
            self._window_cursors[i] = {
                o for o in cursors if o + k < limit and tokens[o + k] == token
            }

    def _finish_evidence(self) -> None:
        if not self._cur_evidence:
            return
        span = tuple(self._cur_evidence)
        if self.config.constraint_mode == CONSTRAIN_CORPUS:
            pos = self.corpus.forward.locate(list(span))[0]
            located = self.corpus.position_to_doc(pos)
            assert located is not None  # spans never contain separators
            doc_id, start = located
        else:
            doc_id = min(self._doc_intervals)  # smallest still-matching doc
            start = self.manager.get(doc_id).forward.locate(list(span))[0]
        self.evidences.append(Evidence(doc_id, start, span))
        self._cur_evidence = []

    # ── output ──

    def build_output(self) -> dict:
        """Structured result: clues, attributed evidence, answer, diagnostics."""
        vocab = self.corpus.vocab
        evidences = [
            {
                "doc_id": e.doc_id,
                "source_id": self.corpus.docs[e.doc_id].source_id,
                "start": e.start,
                "text": " ".join(vocab.decode(e.tokens)),
            }
            for e in self.evidences
        ]
        diagnostics = dict(self.diagnostics)
        diagnostics.update(
            finished=self.finished,
            stage=self.stage.value,
            steps=len(self.emitted),
            input_tokens=len(self.query_tokens),
            output_tokens=len(self.emitted),
        )
        # The answer stage is unconstrained, so render only content ids.
        answer_terms = [
            vocab.term_of(t)
            for t in self.answer_tokens
            if FIRST_CONTENT_ID <= t < vocab.size
        ]
        return {
            "query": self.query_text,
            "clues": [" ".join(vocab.decode(c)) for c in self.clues],
            "candidates": list(self.candidates.doc_ids) if self.candidates else [],
            "evidence": evidences,
            "answer": " ".join(answer_terms),
            "diagnostics": diagnostics,
        }

    # ── beam support ──

    def fork(self) -> "DecodeSession":
        """Independent copy sharing only immutable precomputed inputs."""
        twin = object.__new__(DecodeSession)
        twin.corpus = self.corpus
        twin.manager = self.manager
        twin.config = self.config
        twin.specials = self.specials
        twin.query_text = self.query_text
        twin.query_tokens = self.query_tokens
        twin._aux_clues = self._aux_clues
        twin._lexical_list = self._lexical_list
        twin._scorer = self._scorer
        twin.stage = self.stage
        twin.finished = self.finished
        twin.emitted = list(self.emitted)
        twin.clue_opened = self.clue_opened
        twin.evidence_opened = self.evidence_opened
        twin.clues = list(self.clues)
        twin.generated_clues = list(self.generated_clues)
        twin.candidates = self.candidates
        twin.ranked_generated = self.ranked_generated
        twin.windows = list(self.windows)
        twin.evidences = list(self.evidences)
        twin.answer_tokens = list(self.answer_tokens)
        twin.diagnostics = dict(self.diagnostics)
        twin._cur_clue = list(self._cur_clue)
        twin._cur_evidence = list(self._cur_evidence)
        twin._clue_interval = self._clue_interval
        twin._doc_intervals = dict(self._doc_intervals)
        twin._corpus_interval = self._corpus_interval
        twin._window_cursors = [set(c) for c in self._window_cursors]
        twin._mask_step = -1
        twin._mask_cache = set()
        return twin


# ──────────────────────────────────────────────
# Session construction and runners
# ──────────────────────────────────────────────

def begin_session(
    query_text: str,
    corpus: CorpusIndex,
    manager: DocIndexManager,
    config: DecodeConfig | None = None,
    weigher: LexicalWeigher | None = None,
    scorer: WindowScorer | None = None,
    tokenizer=None,
) -> DecodeSession:
    """Tokenize the query, precompute lexical signals, and open a session."""
    if not query_text.strip():
        raise ValueError("query text is empty")
    config = (config or DecodeConfig()).validate()
    tokenizer = tokenizer or SimpleTokenizer()
    query_tokens = corpus.vocab.encode_known(tokenizer.split(query_text))
    specials = SpecialTokens.for_vocab(corpus.vocab.size)
    aux = auxiliary_clues(query_tokens, corpus, weigher, config.top_aux) if query_tokens else []
    lex = (
        lexical_rank(query_tokens, corpus, weigher, config.top_lex)
        if query_tokens
        else RankedList([])
    )
    return DecodeSession(
        corpus=corpus,
        manager=manager,
        config=config,
        specials=specials,
        query_text=query_text,
        query_tokens=query_tokens,
        aux_clues=aux,
        lexical_list=lex,
        scorer=scorer or TermOverlapScorer(),
    )


def greedy_step(session: DecodeSession, provider: LogitsProvider) -> int:
    """One decode step: adjust provider logits, take the argmax, advance."""
    raw = provider.logits(session.context())
    adjusted = session.adjust_logits(raw)
    token = int(np.argmax(adjusted))
    session.advance(token)
    return token


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Float64 log-softmax; sentinel entries come back as -inf."""
    x = np.asarray(logits, dtype=np.float64)
    m = float(np.max(x))
    shifted = x - m
    with np.errstate(divide="ignore"):
        return shifted - math.log(float(np.sum(np.exp(shifted))))


@dataclass
class _Beam:
    session: DecodeSession
    score: float = 0.0

    def normalized(self) -> float:
        steps = max(1, len(self.session.emitted))
        return self.score / steps


def run_query(
    query_text: str,
    corpus: CorpusIndex,
    manager: DocIndexManager,
    provider: LogitsProvider,
    config: DecodeConfig | None = None,
    weigher: LexicalWeigher | None = None,
    scorer: WindowScorer | None = None,
    trace: list | None = None,
) -> dict:
    """Decode one query to a structured output (greedy or diverse beam).

    When ``trace`` is a list, each greedy step appends a record
    ``{"raw": float32 array, "adjusted": float32 array, "token": int}``
    so the run can be replayed elsewhere and checked bit for bit.
    """
    config = (config or DecodeConfig()).validate()
    if config.num_beams > 1:
        if trace is not None:
            raise ValueError("step tracing is only supported for greedy decoding")
        return _run_diverse_beams(query_text, corpus, manager, provider, config, weigher, scorer)
    session = begin_session(query_text, corpus, manager, config, weigher, scorer)
    steps = 0
    while not session.finished and steps < config.max_steps:
        if trace is None:
            greedy_step(session, provider)
        else:
            raw = np.asarray(provider.logits(session.context()), dtype=np.float32)
            adjusted = session.adjust_logits(raw)
            token = int(np.argmax(adjusted))
            session.advance(token)
            trace.append({"raw": raw, "adjusted": adjusted, "token": token})
        steps += 1
    if not session.finished:
        session.diagnostics["truncated"] = True
    return session.build_output()


def _run_diverse_beams(
    query_text: str,
    corpus: CorpusIndex,
    manager: DocIndexManager,
    provider: LogitsProvider,
    config: DecodeConfig,
    weigher: LexicalWeigher | None,
    scorer: WindowScorer | None,
) -> dict:
    """Group-diverse beam search (one beam per group by default).

    Groups decode in a fixed order each round; a token already chosen by an
    earlier group this round is penalized by ``diversity_penalty`` during
    selection.  Beam scores accumulate the unpenalized log-probability of the
    chosen token under the adjusted distribution.
    """
    n_groups = config.num_beam_groups or config.num_beams
    group_size = config.num_beams // n_groups
    base = begin_session(query_text, corpus, manager, config, weigher, scorer)
    beams = [_Beam(base)] + [_Beam(base.fork()) for _ in range(config.num_beams - 1)]
    groups = [beams[g * group_size : (g + 1) * group_size] for g in range(n_groups)]

    for _ in range(config.max_steps):
        if all(b.session.finished for b in beams):
            break
        chosen_counts: dict[int, int] = {}
        for group in groups:
            live = [b for b in group if not b.session.finished]
            if not live:
                continue
            if group_size == 1:
                self_beam = live[0]
                logprobs = log_softmax(self_beam.session.adjust_logits(
                    provider.logits(self_beam.session.context())
                ))
                penalized = logprobs.copy()
                for t, c in chosen_counts.items():
                    penalized[t] -= config.diversity_penalty * c
                token = int(np.argmax(penalized))
                self_beam.session.advance(token)
                self_beam.score += float(logprobs[token])
                chosen_counts[token] = chosen_counts.get(token, 0) + 1
                continue
            # general case: expand every live beam, keep the best group_size
            candidates: list[tuple[float, int, int, float]] = []
            per_beam_logprobs: dict[int, np.ndarray] = {}
            for bi, beam in enumerate(group):
                if beam.session.finished:
                    candidates.append((beam.score, bi, -1, 0.0))
                    continue
                logprobs = log_softmax(beam.session.adjust_logits(
                    provider.logits(beam.session.context())
                ))
                per_beam_logprobs[bi] = logprobs
                penalized = logprobs.copy()
                for t, c in chosen_counts.items():
                    penalized[t] -= config.diversity_penalty * c
                top = np.argsort(-penalized, kind="stable")[: group_size + 1]
                for t in top:
                    if penalized[t] == -np.inf:
                        continue
                    candidates.append(
                        (beam.score + float(penalized[t]), bi, int(t), float(logprobs[t]))
                    )
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            new_beams: list[_Beam] = []
            for total, bi, token, logprob in candidates:
                if len(new_beams) == group_size:
                    break
                src = group[bi]
                if token == -1:
                    new_beams.append(src)
                    continue
                # Fork unconditionally: a source beam may be selected twice,
                # so its own session must stay at the pre-step state.
                session = src.session.fork()
                session.advance(token)
                new_beams.append(_Beam(session, src.score + logprob))
                chosen_counts[token] = chosen_counts.get(token, 0) + 1
            group[:] = new_beams

    flat = [b for group in groups for b in group]
    for b in flat:
        if not b.session.finished:
            b.session.diagnostics["truncated"] = True
    order = sorted(range(len(flat)), key=lambda i: (-flat[i].normalized(), i))
    best = flat[order[0]]
    output = best.session.build_output()
    output["diagnostics"]["beams"] = [
        {
            "score": flat[i].normalized(),
            "answer": " ".join(corpus.vocab.decode(flat[i].session.answer_tokens)),
            "n_evidence": len(flat[i].session.evidences),
        }
        for i in order
    ]
    return output
