"""Independent brute-force oracles used to pin down expected test values.

Everything in here is deliberately naive: sliding-window scans over the raw
token array, dictionary counting over raw document lists.  None of it shares
code with the package under test; agreement between the two is the point.
"""

from __future__ import annotations

from collections import Counter

import numpy as np


def occurrences(tokens: np.ndarray, pattern: list[int]) -> list[int]:
    """All start positions of ``pattern`` in ``tokens`` (brute-force scan)."""
    tokens = np.asarray(tokens)
    m = len(pattern)
    if m == 0 or m > tokens.size:
        return []
    windows = np.lib.stride_tricks.sliding_window_view(tokens, m)
    hits = np.all(windows == np.asarray(pattern), axis=1)
    return [int(i) for i in np.flatnonzero(hits)]


def count(tokens: np.ndarray, pattern: list[int]) -> int:
    return len(occurrences(tokens, pattern))


def preceding_symbols(tokens: np.ndarray, pattern: list[int]) -> dict[int, int]:
    """Symbols immediately before each occurrence (cyclically), with counts.

    Mirrors left-extension on an FM-index: position 0 wraps to the final
    terminator.
    """
    out: Counter[int] = Counter()
    for pos in occurrences(tokens, pattern):
        out[int(tokens[pos - 1])] += 1
    return dict(out)


def following_symbols(tokens: np.ndarray, pattern: list[int]) -> set[int]:
    """Distinct symbols immediately after each non-final occurrence."""
    n = len(tokens)
    out = set()
    for pos in occurrences(tokens, pattern):
        end = pos + len(pattern)
        if end < n:
            out.add(int(tokens[end]))
    return out


def term_frequency(doc_tokens: list[list[int]], pattern: list[int]) -> dict[int, int]:
    """doc index -> occurrence count, scanning every document."""
    out = {}
    for i, toks in enumerate(doc_tokens):
        c = count(np.asarray(toks, dtype=np.int64), pattern)
        if c:
            out[i] = c
    return out


def continuations(token_lists: list[list[int]], prefix: list[int]) -> set[int]:
    """Distinct tokens that can extend ``prefix`` inside any given list.

    An empty prefix extends to every token present.  Occurrences flush with a
    list's end contribute nothing (there is no next token there).
    """
    out: set[int] = set()
    m = len(prefix)
    for toks in token_lists:
        if m == 0:
            out.update(int(t) for t in toks)
            continue
        n = len(toks)
        for i in range(n - m + 1):
            if toks[i : i + m] == prefix and i + m < n:
                out.add(int(toks[i + m]))
    return out


def grounded(doc_lists: list[list[int]], evidences) -> bool:
    """Every (doc_id, start, tokens) evidence is a verbatim slice of its doc."""
    for e in evidences:
        toks = doc_lists[e.doc_id]
        if list(e.tokens) != toks[e.start : e.start + len(e.tokens)]:
            return False
    return True


def merge_spans(spans: list[tuple[int, int]], max_len: int) -> list[tuple[int, int]]:
    """Merge overlapping half-open spans unless the merge would exceed max_len."""
    merged: list[tuple[int, int]] = []
    for s, e in sorted(spans):
        if merged:
            ls, le = merged[-1]
            if s < le and max(e, le) - ls <= max_len:
                merged[-1] = (ls, max(e, le))
                continue
        merged.append((s, e))
    return merged
