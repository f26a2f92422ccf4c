"""Corpus ingestion and the two-level index store.

Documents are tokenized, mapped to integer ids, and concatenated into one
stream ``doc0 ⊕ sep ⊕ doc1 ⊕ sep ⊕ … ⊕ sep ⊕ terminator`` (terminator id 0,
separator id 1, content ids from 2).  Two FM-indexes are kept over that
stream: a forward one for count/locate/extract and a reversed one so that
left-to-right decoding can extend matches one `backward_step` at a time.

Per-document indexes are built lazily by :class:`DocIndexManager` — the
corpus-level index answers "does this span exist anywhere", the per-document
ones answer "can this span continue inside *this* candidate".
"""

from __future__ import annotations

import json
import re
import threading
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Protocol, Sequence

import numpy as np

from .fmindex import DOC_SEPARATOR, TERMINATOR, FMIndex, reverse_stream

FIRST_CONTENT_ID = 2

FORWARD_FILE = "forward.fmx"
REVERSE_FILE = "reverse.fmx"
OFFSETS_FILE = "offsets.json"
VOCAB_FILE = "vocab.json"


class CorpusFormatError(ValueError):
    """Raised for malformed corpus records; carries the offending line."""


# ──────────────────────────────────────────────
# Tokenization and vocabulary
# ──────────────────────────────────────────────

class Tokenizer(Protocol):
    """Anything that splits raw text into string terms."""

    name: str

    def split(self, text: str) -> list[str]: ...


class SimpleTokenizer:
    """Lowercases and keeps maximal ``[a-z0-9]+`` runs; punctuation separates."""

    name = "simple-v1"
    _WORD = re.compile(r"[a-z0-9]+")

    def split(self, text: str) -> list[str]:
        return self._WORD.findall(text.lower())


class Vocabulary:
    """Bidirectional term/id table; content ids start at 2.

    Ids 0 and 1 are reserved for the stream terminator and the document
    separator and never map to terms.
    """

    def __init__(self, terms: Sequence[str], tokenizer_name: str = SimpleTokenizer.name):
        self.terms = list(terms)
        self.tokenizer_name = tokenizer_name
        self._ids = {t: FIRST_CONTENT_ID + i for i, t in enumerate(self.terms)}
        if len(self._ids) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")

    @property
    def size(self) -> int:
        """Total id space including the two reserved ids."""
        return FIRST_CONTENT_ID + len(self.terms)

    def id_of(self, term: str) -> int | None:
        return self._ids.get(term)

    def term_of(self, token_id: int) -> str:
        if token_id < FIRST_CONTENT_ID or token_id >= self.size:
            raise ValueError(f"id {token_id} is not a content token")
        return self.terms[token_id - FIRST_CONTENT_ID]

    def encode_known(self, terms: Iterable[str]) -> list[int]:
        """Map terms to ids, silently dropping out-of-vocabulary terms."""
        out = []
        for t in terms:
            i = self._ids.get(t)
            if i is not None:
                out.append(i)
        return out

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.term_of(int(i)) for i in ids]

    def to_json(self) -> str:
        payload = {"version": 1, "tokenizer": self.tokenizer_name, "terms": self.terms}
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        payload = json.loads(text)
        if payload.get("version") != 1:
            raise CorpusFormatError(f"unsupported vocabulary version {payload.get('version')}")
        return cls(payload["terms"], payload.get("tokenizer", SimpleTokenizer.name))


# ──────────────────────────────────────────────
# Corpus index
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class DocRecord:
    doc_id: int
    source_id: str
    title: str
    start: int
    length: int


class CorpusIndex:
    """Forward + reversed FM-indexes over the concatenated corpus stream."""

    def __init__(
        self,
        forward: FMIndex,
        reverse: FMIndex,
        vocab: Vocabulary,
        docs: Sequence[DocRecord],
    ):
        self.forward = forward
        self.reverse = reverse
        self.vocab = vocab
        self.docs = list(docs)
        self._starts = [d.start for d in self.docs]
        self._stats_cache: dict[tuple[int, ...], "ClueStats"] = {}

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def total_tokens(self) -> int:
        return self.forward.length

    def doc_span(self, doc_id: int) -> tuple[int, int]:
        rec = self._doc(doc_id)
        return rec.start, rec.length

    def doc_tokens(self, doc_id: int) -> np.ndarray:
        rec = self._doc(doc_id)
        return self.forward.extract(rec.start, rec.length)

    def position_to_doc(self, position: int) -> tuple[int, int] | None:
        """Map a stream position to ``(doc_id, offset)``; None on boundaries."""
        if position < 0 or position >= self.total_tokens:
            raise ValueError(f"position {position} outside stream of length {self.total_tokens}")
        i = bisect_right(self._starts, position) - 1
        if i < 0:
            return None
        rec = self.docs[i]
        if position < rec.start + rec.length:
            return rec.doc_id, position - rec.start
        return None  # separator or terminator

    def _doc(self, doc_id: int) -> DocRecord:
        if not 0 <= doc_id < len(self.docs):
            raise ValueError(f"doc_id {doc_id} outside [0, {len(self.docs)})")
        return self.docs[doc_id]

    # ── persistence ──

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / FORWARD_FILE, "wb") as fh:
            self.forward.save(fh)
        with open(directory / REVERSE_FILE, "wb") as fh:
            self.reverse.save(fh)
        offsets = {
            "version": 1,
            "docs": [
                {"id": d.source_id, "length": d.length, "start": d.start, "title": d.title}
                for d in self.docs
            ],
        }
        (directory / OFFSETS_FILE).write_text(
            json.dumps(offsets, sort_keys=True, separators=(",", ":")) + "\n"
        )
        (directory / VOCAB_FILE).write_text(self.vocab.to_json())

    @classmethod
    def load(cls, directory: str | Path) -> "CorpusIndex":
        directory = Path(directory)
        with open(directory / FORWARD_FILE, "rb") as fh:
            forward = FMIndex.load(fh)
        with open(directory / REVERSE_FILE, "rb") as fh:
            reverse = FMIndex.load(fh)
        payload = json.loads((directory / OFFSETS_FILE).read_text())
        if payload.get("version") != 1:
            raise CorpusFormatError(f"unsupported offsets version {payload.get('version')}")
        docs = [
            DocRecord(i, d["id"], d.get("title", ""), d["start"], d["length"])
            for i, d in enumerate(payload["docs"])
        ]
        vocab = Vocabulary.from_json((directory / VOCAB_FILE).read_text())
        return cls(forward, reverse, vocab, docs)


# ──────────────────────────────────────────────
# Ingestion
# ──────────────────────────────────────────────

def ingest(
    records: Iterable[Mapping[str, str]],
    tokenizer: Tokenizer | None = None,
    sample_rate: int | None = None,
) -> CorpusIndex:
    """Tokenize and index a corpus of ``{"id", "title", "text"}`` records.

    Ids are assigned to terms in first-seen order, so re-ingesting the same
    records reproduces the index byte for byte.
    """
    tokenizer = tokenizer or SimpleTokenizer()
    terms: list[str] = []
    term_ids: dict[str, int] = {}
    stream: list[int] = []
    docs: list[DocRecord] = []
    seen_sources: set[str] = set()

    for record in records:
        try:
            source_id = str(record["id"])
            text = record["text"]
        except KeyError as exc:
            raise CorpusFormatError(f"record {len(docs)} is missing field {exc}") from None
        if source_id in seen_sources:
            raise CorpusFormatError(f"duplicate document id {source_id!r}")
        seen_sources.add(source_id)
        title = str(record.get("title", ""))
        start = len(stream)
        for term in tokenizer.split(text):
            tid = term_ids.get(term)
            if tid is None:
                tid = FIRST_CONTENT_ID + len(terms)
                term_ids[term] = tid
                terms.append(term)
            stream.append(tid)
        docs.append(DocRecord(len(docs), source_id, title, start, len(stream) - start))
        stream.append(DOC_SEPARATOR)

    if not docs:
        raise CorpusFormatError("corpus is empty")
    stream.append(TERMINATOR)

    tokens = np.asarray(stream, dtype=np.uint32)
    vocab = Vocabulary(terms, tokenizer.name)
    kwargs = {} if sample_rate is None else {"sample_rate": sample_rate}
    forward = FMIndex.build(tokens, vocab_size=vocab.size, **kwargs)
    reverse = FMIndex.build(reverse_stream(tokens), vocab_size=vocab.size, **kwargs)
    return CorpusIndex(forward, reverse, vocab, docs)


def read_jsonl(path: str | Path) -> Iterator[dict]:
    """Yield one record per line, naming the line on parse errors."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise CorpusFormatError(f"{path}:{lineno}: expected an object")
            yield record


# ──────────────────────────────────────────────
# Per-document indexes
# ──────────────────────────────────────────────

class DocIndexes(NamedTuple):
    doc_id: int
    tokens: np.ndarray  # content tokens only, no terminator
    forward: FMIndex
    reverse: FMIndex


class DocIndexManager:
    """Lazily builds and caches per-document index pairs (thread-safe)."""

    def __init__(self, corpus: CorpusIndex, sample_rate: int | None = None):
        self.corpus = corpus
        self._sample_rate = sample_rate
        self._cache: dict[int, DocIndexes] = {}
        self._lock = threading.Lock()

    def get(self, doc_id: int) -> DocIndexes:
        with self._lock:
            entry = self._cache.get(doc_id)
            if entry is None:
                entry = self._build(doc_id)
                self._cache[doc_id] = entry
            return entry

    def cached_ids(self) -> list[int]:
        with self._lock:
            return sorted(self._cache)

    def _build(self, doc_id: int) -> DocIndexes:
        tokens = self.corpus.doc_tokens(doc_id)
        terminated = np.append(tokens, TERMINATOR).astype(np.uint32)
        kwargs = {} if self._sample_rate is None else {"sample_rate": self._sample_rate}
        vocab_size = self.corpus.vocab.size
        forward = FMIndex.build(terminated, vocab_size=vocab_size, **kwargs)
        reverse = FMIndex.build(reverse_stream(terminated), vocab_size=vocab_size, **kwargs)
        return DocIndexes(doc_id, tokens, forward, reverse)


# ──────────────────────────────────────────────
# Clue statistics
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class ClueStats:
    """Corpus statistics for one token span: collection frequency, document
    frequency, and per-document term frequency."""

    cf: int
    df: int
    tf: dict[int, int]


def clue_stats(corpus: CorpusIndex, clue: Sequence[int]) -> ClueStats:
    """Count a clue span corpus-wide and per document.

    The clue must be non-empty content tokens; reserved ids are rejected
    rather than silently matching structural symbols.  Results are memoized
    on the (immutable) corpus index, since decoding asks for the same common
    terms over and over; a rare duplicate computation under concurrent first
    access is harmless.
    """
    clue = tuple(int(t) for t in clue)
    if not clue:
        raise ValueError("clue must be non-empty")
    cached = corpus._stats_cache.get(clue)
    if cached is not None:
        return cached
    for t in clue:
        if t < FIRST_CONTENT_ID or t >= corpus.vocab.size:
            raise ValueError(f"clue token {t} is not a content token")
    positions = corpus.forward.locate(list(clue))
    tf: dict[int, int] = {}
    for pos in positions:
        hit = corpus.position_to_doc(pos)
        if hit is None:  # cannot happen: clues contain no separators
            continue
        doc_id, _ = hit
        tf[doc_id] = tf.get(doc_id, 0) + 1
    stats = ClueStats(cf=len(positions), df=len(tf), tf=tf)
    corpus._stats_cache[clue] = stats
    return stats
