"""Dynamic-programming edit oracle for supervised learning.

Given a current hypothesis and a reference, the oracle extracts the edit
actions an optimal alignment implies: which tokens to delete, how many
placeholders to open in each gap, and which reference tokens fill them.
Substitutions are realized as delete-then-insert because the model's action
space has no atomic substitute.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .editing import Hypothesis
from .errors import LengthError, StateError
from .vocab import PLH

AlignOp = Literal["match", "substitute", "delete", "insert"]


@dataclass(frozen=True)
class Alignment:
    """Ordered edit script over (current, reference) token pairs."""

    ops: tuple[AlignOp, ...]
    distance: int

    def replay(self, current: Sequence[int], reference: Sequence[int]) -> list[int]:
        out: list[int] = []
        i = j = 0
        for op in self.ops:
            if op == "match":
                out.append(current[i]); i += 1; j += 1
            elif op == "substitute":
                out.append(reference[j]); i += 1; j += 1
            elif op == "delete":
                i += 1
            else:
                out.append(reference[j]); j += 1
        return out


def levenshtein_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Unit-cost edit distance (insert / delete / substitute)."""
    m, n = len(a), len(b)
    prev = list(range(n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        ai = a[i - 1]
        for j in range(1, n + 1):
            sub = prev[j - 1] + (ai != b[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[n]


def brute_force_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Unmemoized exhaustive recursion; independent oracle for the DP."""
    def rec(i: int, j: int) -> int:
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return rec(i + 1, j + 1)
        return 1 + min(rec(i + 1, j + 1), rec(i + 1, j), rec(i, j + 1))
    return rec(0, 0)


def align(current: Sequence[int], reference: Sequence[int]) -> Alignment:
    """Optimal alignment with deterministic tie-break match > sub > del > ins."""
    m, n = len(current), len(reference)
    cost = np.zeros((m + 1, n + 1), dtype=np.int64)
    cost[:, 0] = np.arange(m + 1)
    cost[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        ci = current[i - 1]
        for j in range(1, n + 1):
            cost[i, j] = min(cost[i - 1, j - 1] + (ci != reference[j - 1]),
                             cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    ops: list[AlignOp] = []
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and current[i - 1] == reference[j - 1] \
                and cost[i, j] == cost[i - 1, j - 1]:
            ops.append("match"); i -= 1; j -= 1
        elif i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + 1:
            ops.append("substitute"); i -= 1; j -= 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            ops.append("delete"); i -= 1
        else:
            ops.append("insert"); j -= 1
    ops.reverse()
    distance = int(cost[m, n])
    return Alignment(ops=tuple(ops), distance=distance)


def expert_actions(current: Hypothesis, reference: Sequence[int], *,
                   max_seq_len: int = 10 ** 9
                   ) -> tuple[list[int], list[int], list[int]]:
    """Optimal (delete_mask, insert_counts, fill_tokens) toward ``reference``.

    Deletes what the alignment deletes or substitutes, then opens one gap
    slot per missing reference token; applying the three actions in order
    yields the reference exactly.
    """
    if PLH in current.tokens:
        raise StateError("expert oracle requires a placeholder-free hypothesis")
    if len(reference) + 2 > max_seq_len:
        raise LengthError(
            f"reference length {len(reference)} does not fit max_seq_len {max_seq_len}")
    cur = list(current.interior)
    ref = list(reference)
    alignment = align(cur, ref)
    delete_mask: list[int] = []
    # kept tokens are the alignment's matches; counts index gaps of BOS+kept+EOS
    insert_counts = [0]
    fill_tokens: list[int] = []
    for op in alignment.ops:
        if op == "match":
            delete_mask.append(0)
            insert_counts.append(0)
        elif op == "substitute":
            delete_mask.append(1)
            insert_counts[-1] += 1
        elif op == "delete":
            delete_mask.append(1)
        else:  # insert
            insert_counts[-1] += 1
    j = 0
    for op in alignment.ops:
        if op in ("substitute", "insert", "match"):
            if op != "match":
                fill_tokens.append(ref[j])
            j += 1
    return delete_mask, insert_counts, fill_tokens


def corrupt(reference: Sequence[int], rng: np.random.Generator,
            drop_rate: float = 0.3) -> Hypothesis:
    """Drop each reference token independently with probability ``drop_rate``."""
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError(f"drop_rate must be in [0, 1], got {drop_rate}")
    keep = rng.random(len(reference)) >= drop_rate
    return Hypothesis.from_content(t for t, k in zip(reference, keep) if k)
