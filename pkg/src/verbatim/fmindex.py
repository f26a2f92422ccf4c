"""FM-index over integer token streams.

The index is built from the Burrows-Wheeler transform of a token sequence that
ends in a unique, lexicographically smallest terminator (id 0).  It answers
four queries without storing the original sequence in plain form:

* ``count(pattern)``   — number of occurrences, via backward search.
* ``locate(pattern)``  — sorted start positions, via sampled suffix positions.
* ``extract(i, n)``    — recover ``n`` tokens starting at position ``i``.
* ``allowed_next(iv)`` — the distinct symbols that can extend a match, each
  paired with its successor interval (one wavelet-tree pass, no per-symbol
  probing).

Matching proceeds right-to-left: ``backward_step(iv, s)`` narrows the interval
for pattern ``p`` to the interval for ``s·p``.  Callers that need left-to-right
extension (e.g. appending tokens during decoding) run the same machinery on an
index built over the reversed stream.

Construction sorts suffixes by prefix doubling (O(n log n) radix-style passes
over integer rank pairs); rotation materialization is deliberately avoided.
Occurrence ranks come from a level-wise wavelet tree (O(log V) per query), and
positions from suffix samples at a fixed rate plus an LF walk.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import binio

TERMINATOR = 0
DOC_SEPARATOR = 1

MAGIC = b"RFMX"
FORMAT_VERSION = 1
DEFAULT_SAMPLE_RATE = 32


# ──────────────────────────────────────────────
# Search intervals
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class SearchInterval:
    """Half-closed run ``[lo, hi]`` of suffix-array rows matching a pattern.

    ``matched_len`` records how many symbols have been folded into the match,
    including the steps that emptied it.  The empty interval is the canonical
    value ``(lo=0, hi=-1)``; code must branch on :attr:`is_empty` rather than
    doing arithmetic on a ``lo > hi`` pair.
    """

    lo: int
    hi: int
    matched_len: int = 0

    @property
    def is_empty(self) -> bool:
        return self.hi < self.lo

    def count(self) -> int:
        return 0 if self.is_empty else self.hi - self.lo + 1


def empty_interval(matched_len: int = 0) -> SearchInterval:
    return SearchInterval(0, -1, matched_len)


# ──────────────────────────────────────────────
# Rank primitives
# ──────────────────────────────────────────────

class BitVector:
    """Plain bitvector with O(1) rank over 64-bit packed words."""

    __slots__ = ("n", "_words", "_blocks")

    def __init__(self, bits: np.ndarray | Sequence[int]):
        bits = np.asarray(bits, dtype=np.uint8)
        self.n = int(bits.size)
        n_words = max(1, (self.n + 63) // 64)
        padded = np.zeros(n_words * 64, dtype=np.uint8)
        padded[: self.n] = bits
        lanes = padded.reshape(-1, 64).astype(np.uint64)
        shifts = np.arange(64, dtype=np.uint64)
        self._words = np.bitwise_or.reduce(lanes << shifts, axis=1)
        blocks = np.zeros(n_words + 1, dtype=np.int64)
        np.cumsum(lanes.sum(axis=1), out=blocks[1:])
        self._blocks = blocks

    def get(self, i: int) -> int:
        return (int(self._words[i >> 6]) >> (i & 63)) & 1

    def rank1(self, i: int) -> int:
        """Number of set bits in ``[0, i)``; ``0 <= i <= n``."""
        w, r = i >> 6, i & 63
        total = int(self._blocks[w])
        if r:
            mask = (1 << r) - 1
            total += (int(self._words[w]) & mask).bit_count()
        return total

    def rank0(self, i: int) -> int:
        return i - self.rank1(i)


class WaveletTree:
    """Level-wise wavelet tree giving rank(symbol, i) in O(log V).

    Level ``l`` stores bit ``levels-1-l`` of every symbol, with elements
    stably ordered by their top ``l`` bits, so each node's occupants form one
    contiguous segment and both children stay contiguous one level down.
    """

    __slots__ = ("n", "vocab_size", "levels", "_level_bits")

    def __init__(self, symbols: np.ndarray, vocab_size: int):
        if vocab_size < 2:
            raise ValueError("wavelet tree needs a vocabulary of at least 2")
        self.n = int(symbols.size)
        self.vocab_size = vocab_size
        self.levels = max(1, (vocab_size - 1).bit_length())
        self._level_bits: list[BitVector] = []
        cur = np.asarray(symbols, dtype=np.uint32)
        for level in range(self.levels):
            shift = self.levels - 1 - level
            self._level_bits.append(BitVector((cur >> shift) & 1))
            if level + 1 < self.levels:
                cur = cur[np.argsort(cur >> shift, kind="stable")]

    def rank(self, symbol: int, i: int) -> int:
        """Occurrences of ``symbol`` in the original positions ``[0, i)``."""
        s, e, p = 0, self.n, i
        for level in range(self.levels):
            if p == 0:
                return 0
            bv = self._level_bits[level]
            ones_s = bv.rank1(s)
            zeros_seg = (e - s) - (bv.rank1(e) - ones_s)
            zeros_pre = p - (bv.rank1(s + p) - ones_s)
            if (symbol >> (self.levels - 1 - level)) & 1:
                s, p = s + zeros_seg, p - zeros_pre
            else:
                e, p = s + zeros_seg, zeros_pre
        return p

    def interval_symbols(self, lo: int, hi: int) -> list[tuple[int, int, int]]:
        """Distinct symbols in positions ``[lo, hi)`` with their rank bounds.

        Returns ``(symbol, rank_before_lo, rank_before_hi)`` triples sorted by
        symbol; exactly the quantities backward search needs to spawn one
        successor interval per extending symbol.
        """
        out: list[tuple[int, int, int]] = []
        stack = [(0, 0, self.n, lo, hi, 0)]
        while stack:
            level, s, e, ql, qh, prefix = stack.pop()
            if ql >= qh:
                continue
            if level == self.levels:
                out.append((prefix, ql, qh))
                continue
            bv = self._level_bits[level]
            ones_s = bv.rank1(s)
            zeros_seg = (e - s) - (bv.rank1(e) - ones_s)
            zl = ql - (bv.rank1(s + ql) - ones_s)
            zh = qh - (bv.rank1(s + qh) - ones_s)
            stack.append((level + 1, s, s + zeros_seg, zl, zh, prefix << 1))
            stack.append((level + 1, s + zeros_seg, e, ql - zl, qh - zh, (prefix << 1) | 1))
        out.sort()
        return out


# ──────────────────────────────────────────────
# Suffix sorting
# ──────────────────────────────────────────────

def build_suffix_array(tokens: np.ndarray) -> np.ndarray:
    """Suffix array by prefix doubling (ranks of length-2^k prefixes).

    Each round lexsorts (rank[i], rank[i+k]) pairs and re-compacts ranks;
    the unique terminal symbol guarantees all ranks separate within
    O(log n) rounds.
    """
    n = int(tokens.size)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    rank = tokens.astype(np.int64)
    k = 1
    while True:
        successor = np.full(n, -1, dtype=np.int64)
        successor[: n - k] = rank[k:]
        order = np.lexsort((successor, rank))
        r1, r2 = rank[order], successor[order]
        bumps = np.empty(n, dtype=np.int64)
        bumps[0] = 0
        bumps[1:] = (r1[1:] != r1[:-1]) | (r2[1:] != r2[:-1])
        sorted_ranks = np.cumsum(bumps)
        if int(sorted_ranks[-1]) == n - 1:
            return order.astype(np.int64)
        rank = np.empty(n, dtype=np.int64)
        rank[order] = sorted_ranks
        k *= 2


# ──────────────────────────────────────────────
# The index
# ──────────────────────────────────────────────

class FMIndex:
    """FM-index over a token stream ending in the unique terminator 0."""

    def __init__(
        self,
        *,
        bwt: np.ndarray,
        counts: np.ndarray,
        vocab_size: int,
        sample_rate: int,
        marked_rows: np.ndarray,
        sa_samples: np.ndarray,
        isa_samples: np.ndarray,
    ):
        self.bwt = bwt
        self.counts = counts
        self.vocab_size = vocab_size
        self.sample_rate = sample_rate
        self.length = int(bwt.size)
        self._marked_rows = np.asarray(marked_rows, dtype=np.int64)
        marks = np.zeros(self.length, dtype=np.uint8)
        marks[self._marked_rows] = 1
        self._marked = BitVector(marks)
        self._sa_samples = sa_samples
        self._isa_samples = isa_samples
        self.wavelet = WaveletTree(bwt, vocab_size)

    # ── construction ──

    @classmethod
    def build(
        cls,
        tokens: np.ndarray | Sequence[int],
        vocab_size: int | None = None,
        sample_rate: int = DEFAULT_SAMPLE_RATE,
    ) -> "FMIndex":
        """Index ``tokens``; the stream must end in exactly one terminator 0."""
        tokens = np.asarray(tokens, dtype=np.uint32)
        n = int(tokens.size)
        if n == 0:
            raise ValueError("cannot index an empty token stream")
        if int(tokens[-1]) != TERMINATOR:
            raise ValueError("token stream must end with the terminator id 0")
        if int(np.count_nonzero(tokens == TERMINATOR)) != 1:
            raise ValueError("terminator id 0 must occur exactly once, at the end")
        highest = int(tokens.max())
        if vocab_size is None:
            vocab_size = max(2, highest + 1)
        elif highest >= vocab_size:
            raise ValueError(f"symbol {highest} out of range for vocab_size={vocab_size}")
        if sample_rate < 1:
            raise ValueError("sample_rate must be positive")

        sa = build_suffix_array(tokens)
        bwt = tokens[sa - 1]  # sa==0 wraps to tokens[-1], the terminator
        occur = np.bincount(tokens, minlength=vocab_size)
        counts = np.zeros(vocab_size + 1, dtype=np.int64)
        np.cumsum(occur, out=counts[1:])

        marked = sa % sample_rate == 0
        isa = np.empty(n, dtype=np.int64)
        isa[sa] = np.arange(n, dtype=np.int64)
        return cls(
            bwt=bwt,
            counts=counts,
            vocab_size=vocab_size,
            sample_rate=sample_rate,
            marked_rows=np.flatnonzero(marked),
            sa_samples=sa[marked],
            isa_samples=isa[::sample_rate].copy(),
        )

    # ── interval algebra ──

    def full_interval(self) -> SearchInterval:
        return SearchInterval(0, self.length - 1, 0)

    def backward_step(self, interval: SearchInterval, symbol: int) -> SearchInterval:
        """Narrow ``interval`` for pattern p to the interval for symbol·p."""
        if not 0 <= symbol < self.vocab_size:
            raise ValueError(f"symbol {symbol} outside vocabulary [0, {self.vocab_size})")
        depth = interval.matched_len + 1
        if interval.is_empty:
            return empty_interval(depth)
        base = int(self.counts[symbol])
        lo = base + self.wavelet.rank(symbol, interval.lo)
        hi = base + self.wavelet.rank(symbol, interval.hi + 1) - 1
        if hi < lo:
            return empty_interval(depth)
        return SearchInterval(lo, hi, depth)

    def pattern_interval(self, pattern: Sequence[int]) -> SearchInterval:
        iv = self.full_interval()
        for symbol in reversed(list(pattern)):
            iv = self.backward_step(iv, int(symbol))
            if iv.is_empty:
                return iv
        return iv

    def allowed_next(self, interval: SearchInterval) -> dict[int, SearchInterval]:
        """Symbols that extend the match on the left, with successor intervals.

        Single wavelet pass over the interval; every returned interval is
        non-empty by construction.
        """
        if interval.is_empty:
            return {}
        depth = interval.matched_len + 1
        out: dict[int, SearchInterval] = {}
        for symbol, r_lo, r_hi in self.wavelet.interval_symbols(interval.lo, interval.hi + 1):
            base = int(self.counts[symbol])
            out[symbol] = SearchInterval(base + r_lo, base + r_hi - 1, depth)
        return out

    # ── queries ──

    def count(self, pattern: Sequence[int]) -> int:
        if len(pattern) == 0:
            raise ValueError("pattern must be non-empty")
        return self.pattern_interval(pattern).count()

    def locate(self, pattern: Sequence[int]) -> list[int]:
        """Sorted start positions of ``pattern`` in the indexed stream."""
        if len(pattern) == 0:
            raise ValueError("pattern must be non-empty")
        iv = self.pattern_interval(pattern)
        if iv.is_empty:
            return []
        positions = []
        for row in range(iv.lo, iv.hi + 1):
            r, steps = row, 0
            while not self._marked.get(r):
                r = self.lf(r)
                steps += 1
            positions.append(int(self._sa_samples[self._marked.rank1(r)]) + steps)
        positions.sort()
        return positions

    def extract(self, start: int, length: int) -> np.ndarray:
        """Recover ``tokens[start : start+length]`` from the index alone."""
        if start < 0 or length < 0 or start + length > self.length:
            raise ValueError(
                f"extract range [{start}, {start + length}) outside stream of length {self.length}"
            )
        if length == 0:
            return np.empty(0, dtype=np.uint32)
        tail: list[int] = []
        end = start + length
        if end == self.length:
            tail.append(TERMINATOR)  # final symbol is the terminator by construction
            end -= 1
        buf: list[int] = []
        if end > start:
            anchor, row = self._anchor_at_or_after(end)
            k, r = anchor, row
            while k > start:
                symbol = int(self.bwt[r])  # token at position k-1
                k -= 1
                if k < end:
                    buf.append(symbol)
                r = self.lf(r)
        buf.reverse()
        return np.array(buf + tail, dtype=np.uint32)

    def lf(self, row: int) -> int:
        """Last-to-first column mapping: the row of the one-shorter suffix."""
        symbol = int(self.bwt[row])
        return int(self.counts[symbol]) + self.wavelet.rank(symbol, row)

    def _anchor_at_or_after(self, position: int) -> tuple[int, int]:
        """Smallest sampled text position >= ``position`` and its SA row."""
        rate = self.sample_rate
        candidate = ((position + rate - 1) // rate) * rate
        if candidate // rate < self._isa_samples.size:
            return candidate, int(self._isa_samples[candidate // rate])
        # Past the last multiple-of-rate sample: fall back to the terminator
        # suffix, which always occupies row 0.
        return self.length - 1, 0

    # ── serialization ──

    def save(self, fh: BinaryIO) -> None:
        """Write the index; byte-identical output for identical inputs."""
        binio.write_magic(fh, MAGIC, FORMAT_VERSION)
        binio.write_u32(fh, self.vocab_size)
        binio.write_u64(fh, self.length)
        binio.write_u32(fh, self.sample_rate)
        binio.write_array(fh, self.bwt.astype("<u4"))
        binio.write_array(fh, self.counts.astype("<u8"))
        binio.write_array(fh, self._marked_rows.astype("<u8"))
        binio.write_array(fh, self._sa_samples.astype("<u8"))
        binio.write_array(fh, self._isa_samples.astype("<u8"))

    @classmethod
    def load(cls, fh: BinaryIO) -> "FMIndex":
        binio.read_magic(fh, MAGIC, FORMAT_VERSION)
        vocab_size = binio.read_u32(fh)
        length = binio.read_u64(fh)
        sample_rate = binio.read_u32(fh)
        bwt = binio.read_array(fh, "<u4")
        counts = binio.read_array(fh, "<u8").astype(np.int64)
        marked_rows = binio.read_array(fh, "<u8").astype(np.int64)
        sa_samples = binio.read_array(fh, "<u8").astype(np.int64)
        isa_samples = binio.read_array(fh, "<u8").astype(np.int64)
        if bwt.size != length:
            raise binio.FormatError("bwt payload length disagrees with header")
        if counts.size != vocab_size + 1:
            raise binio.FormatError("cumulative count table has the wrong size")
        return cls(
            bwt=bwt,
            counts=counts,
            vocab_size=vocab_size,
            sample_rate=sample_rate,
            marked_rows=marked_rows,
            sa_samples=sa_samples,
            isa_samples=isa_samples,
        )


def reverse_stream(tokens: np.ndarray | Iterable[int]) -> np.ndarray:
    """Reverse the content of a terminated stream, keeping the terminator last."""
    tokens = np.asarray(tokens, dtype=np.uint32)
    if tokens.size == 0 or int(tokens[-1]) != TERMINATOR:
        raise ValueError("expected a stream ending in the terminator id 0")
    out = np.empty_like(tokens)
    out[:-1] = tokens[:-1][::-1]
    out[-1] = TERMINATOR
    return out
