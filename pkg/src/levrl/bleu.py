"""Token-id BLEU: corpus-level for evaluation, smoothed sentence-level as reward.

Scores live in [0, 1]; CLI reports multiply by 100.  Sentence scoring
defaults to add-one smoothing of the order-2..4 precisions — without it,
early rollouts earn uniformly zero reward and learning stalls.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

MAX_ORDER = 4


def _ngram_counts(tokens: Sequence[int], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    """Clipped n-gram matches/totals for n=1..4 plus lengths; additive."""

    matches: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    totals: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    hyp_len: int = 0
    ref_len: int = 0

    @classmethod
    def of_pair(cls, hyp: Sequence[int], ref: Sequence[int]) -> "BleuStats":
        stats = cls(hyp_len=len(hyp), ref_len=len(ref))
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngram_counts(hyp, n)
            ref_counts = _ngram_counts(ref, n)
            stats.totals[n - 1] = max(len(hyp) - n + 1, 0)
            stats.matches[n - 1] = sum(
                min(c, ref_counts[g]) for g, c in hyp_counts.items())
        return stats

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            matches=[a + b for a, b in zip(self.matches, other.matches)],
            totals=[a + b for a, b in zip(self.totals, other.totals)],
            hyp_len=self.hyp_len + other.hyp_len,
            ref_len=self.ref_len + other.ref_len,
        )

    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        return math.exp(min(0.0, 1.0 - self.ref_len / self.hyp_len))


def sentence_bleu(hyp: Sequence[int], ref: Sequence[int],
                  smoothing: str = "addone") -> float:
    """Smoothed sentence BLEU of content-token sequences, in [0, 1]."""
    if len(ref) == 0:
        raise ValueError("reference must be non-empty")
    if smoothing not in ("addone", "none"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if len(hyp) == 0:
        return 0.0
    stats = BleuStats.of_pair(hyp, ref)
    log_sum = 0.0
    for n in range(1, MAX_ORDER + 1):
        m, t = stats.matches[n - 1], stats.totals[n - 1]
        if smoothing == "addone" and n >= 2:
            p = (m + 1) / (t + 1)
        else:
            if t == 0 or m == 0:
                return 0.0
            p = m / t
        log_sum += math.log(p)
    return stats.brevity_penalty() * math.exp(log_sum / MAX_ORDER)


def corpus_bleu(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Standard corpus BLEU (no smoothing) from summed statistics, in [0, 1]."""
    if len(pairs) == 0:
        raise ValueError("corpus must be non-empty")
    total = BleuStats()
    for hyp, ref in pairs:
        if len(ref) == 0:
            raise ValueError("reference must be non-empty")
        total = total + BleuStats.of_pair(hyp, ref)
    return bleu_from_stats(total)


def bleu_from_stats(stats: BleuStats) -> float:
    log_sum = 0.0
    for m, t in zip(stats.matches, stats.totals):
        if t == 0 or m == 0:
            return 0.0
        log_sum += math.log(m / t)
    return stats.brevity_penalty() * math.exp(log_sum / MAX_ORDER)
