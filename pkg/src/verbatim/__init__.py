"""Generate-to-retrieve question answering over an FM-indexed corpus.

The decoder emits clue phrases under whole-corpus constraints, ranks
candidate documents by fusing clue statistics with a lexical ranking, then
emits verbatim evidence spans under per-document constraints steered by
future-window relevance bonuses, and finally answers unconstrained.  Every
evidence span is an exact substring of a real document by construction.
"""

from .binio import FormatError, VersionError
from .corpus import (
    CorpusFormatError,
    CorpusIndex,
    DocIndexManager,
    SimpleTokenizer,
    Vocabulary,
    clue_stats,
    ingest,
    read_jsonl,
)
from .decoding import (
    MASK_SENTINEL,
    ConstraintViolation,
    DecodeConfig,
    DecodeSession,
    Evidence,
    FutureWindow,
    SessionFinished,
    SpecialTokens,
    Stage,
    TermOverlapScorer,
    begin_session,
    greedy_step,
    run_query,
)
from .estimator import VerbatimQA, check_documents, check_queries
from .fmindex import FMIndex, SearchInterval
from .metrics import evaluate, normalize
from .ngram import NgramProvider, format_example, train_provider
from .ranking import Clue, DefaultLexicalWeigher, RankedList, fuse, score_documents
from .study import false_pruning_study, make_decoy_corpus

__version__ = "0.1.0"

__all__ = [
    "Clue",
    "ConstraintViolation",
    "CorpusFormatError",
    "CorpusIndex",
    "DecodeConfig",
    "DecodeSession",
    "DefaultLexicalWeigher",
    "Evidence",
    "FMIndex",
    "FormatError",
    "FutureWindow",
    "MASK_SENTINEL",
    "NgramProvider",
    "RankedList",
    "SearchInterval",
    "SessionFinished",
    "SimpleTokenizer",
    "SpecialTokens",
    "Stage",
    "TermOverlapScorer",
    "VerbatimQA",
    "VersionError",
    "Vocabulary",
    "begin_session",
    "check_documents",
    "check_queries",
    "clue_stats",
    "evaluate",
    "false_pruning_study",
    "format_example",
    "fuse",
    "greedy_step",
    "ingest",
    "make_decoy_corpus",
    "normalize",
    "read_jsonl",
    "run_query",
    "score_documents",
    "train_provider",
    "__version__",
]
