"""Sequence-editing semantics and the iterative refinement loop.

A hypothesis evolves through repeated delete / insert-placeholder /
replace-token phases.  This module owns the pure apply_* semantics, greedy
decoding with the fixed-point stop rule, and temperature-controlled sampling
that records per-action log-probabilities for reinforcement learning.

Batched variants advance many hypotheses in lockstep (padded id matrices);
the single-sequence functions are thin wrappers over them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from . import tensor as T
from .bleu import sentence_bleu
from .errors import LengthError, ShapeError, StateError, VocabularyError
from .model import EditPolicyModel, EncodedBatch, PolicyOutput, pad_batch
from .tensor import no_grad
from .vocab import BOS, EOS, PLH, SENTINEL_IDS

Phase = Literal["delete", "insert", "replace"]


@dataclass(frozen=True)
class Hypothesis:
    """Token sequence BOS ... EOS, possibly containing PLH between phases."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        t = tuple(int(x) for x in self.tokens)
        object.__setattr__(self, "tokens", t)
        if len(t) < 2 or t[0] != BOS or t[-1] != EOS:
            raise StateError(f"hypothesis must be BOS ... EOS, got {t}")

    @classmethod
    def null(cls) -> "Hypothesis":
        return cls((BOS, EOS))

    @classmethod
    def from_content(cls, content: Iterable[int]) -> "Hypothesis":
        return cls((BOS, *content, EOS))

    @property
    def interior(self) -> tuple[int, ...]:
        return self.tokens[1:-1]

    @property
    def content(self) -> tuple[int, ...]:
        """Realized tokens between the sentinels (no PLH expected)."""
        return self.interior

    @property
    def n_placeholders(self) -> int:
        return sum(1 for t in self.tokens if t == PLH)

    @property
    def n_gaps(self) -> int:
        return len(self.tokens) - 1

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class EditAction:
    """One edit payload; exactly the field matching ``kind`` is populated."""

    kind: Phase
    delete_mask: tuple[int, ...] | None = None
    insert_counts: tuple[int, ...] | None = None
    replace_tokens: tuple[int, ...] | None = None

    def __post_init__(self):
        payloads = {"delete": self.delete_mask, "insert": self.insert_counts,
                    "replace": self.replace_tokens}
        if payloads[self.kind] is None:
            raise ShapeError(f"{self.kind} action missing its payload")
        if sum(p is not None for p in payloads.values()) != 1:
            raise ShapeError("exactly one action payload may be populated")

    @property
    def payload(self) -> tuple[int, ...]:
        return {"delete": self.delete_mask, "insert": self.insert_counts,
                "replace": self.replace_tokens}[self.kind]  # type: ignore[return-value]


@dataclass(frozen=True)
class EditStep:
    iteration: int
    action: EditAction
    before: Hypothesis
    after: Hypothesis
    log_prob: float
    step_bleu: float | None = None
    flagged: bool = False


@dataclass
class EditTrace:
    source: tuple[int, ...]
    steps: list[EditStep] = field(default_factory=list)

    @property
    def final_hypothesis(self) -> Hypothesis:
        return self.steps[-1].after if self.steps else Hypothesis.null()

    @property
    def flagged(self) -> bool:
        return any(s.flagged for s in self.steps)

    @property
    def total_log_prob(self) -> float:
        return sum(s.log_prob for s in self.steps)

    def validate_chain(self) -> None:
        for a, b in zip(self.steps, self.steps[1:]):
            if a.after.tokens != b.before.tokens:
                raise StateError("trace states do not chain")


# -- pure edit application ------------------------------------------------------


def apply_delete(hyp: Hypothesis, mask: Sequence[int]) -> Hypothesis:
    """Drop interior tokens where mask is 1; sentinels are untouchable."""
    if PLH in hyp.tokens:
        raise StateError("cannot delete while placeholders are present")
    interior = hyp.interior
    if len(mask) != len(interior):
        raise ShapeError(
            f"delete mask length {len(mask)} != deletable positions {len(interior)}")
    kept = tuple(t for t, m in zip(interior, mask) if not m)
    return Hypothesis((BOS, *kept, EOS))


def apply_insert(hyp: Hypothesis, counts: Sequence[int], *,
                 max_placeholders: int, max_seq_len: int) -> Hypothesis:
    """Insert counts[i] placeholders into gap i (between tokens i and i+1)."""
    if PLH in hyp.tokens:
        raise StateError("cannot insert while placeholders are present")
    if len(counts) != hyp.n_gaps:
        raise ShapeError(f"counts length {len(counts)} != gaps {hyp.n_gaps}")
    if any(c < 0 for c in counts):
        raise ShapeError("negative placeholder count")
    if any(c > max_placeholders for c in counts):
        raise ShapeError(f"count exceeds max_placeholders {max_placeholders}")
    total = len(hyp) + sum(counts)
    if total > max_seq_len:
        raise LengthError(
            f"insertion would give length {total} > max_seq_len {max_seq_len}")
    out: list[int] = []
    for i, tok in enumerate(hyp.tokens):
        out.append(tok)
        if i < hyp.n_gaps:
            out.extend([PLH] * counts[i])
    return Hypothesis(tuple(out))


def apply_replace(hyp: Hypothesis, tokens: Sequence[int]) -> Hypothesis:
    """Fill each placeholder, left to right; length is preserved."""
    n = hyp.n_placeholders
    if len(tokens) != n:
        raise ShapeError(f"{len(tokens)} fill tokens for {n} placeholders")
    for t in tokens:
        if t in SENTINEL_IDS:
            raise VocabularyError(f"cannot fill a placeholder with reserved id {t}")
    fills = iter(tokens)
    return Hypothesis(tuple(next(fills) if t == PLH else t for t in hyp.tokens))


def clamp_insert_counts(hyp: Hypothesis, counts: Sequence[int],
                        max_seq_len: int) -> tuple[list[int], bool]:
    """Reduce counts from the rightmost gap until the hypothesis fits the cap."""
    counts = list(counts)
    budget = max_seq_len - len(hyp)
    overflow = sum(counts) - budget
    clamped = overflow > 0
    gap = len(counts) - 1
    while overflow > 0 and gap >= 0:
        cut = min(counts[gap], overflow)
        counts[gap] -= cut
        overflow -= cut
        gap -= 1
    return counts, clamped


# -- sampling -------------------------------------------------------------------


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of a [N, C] probability matrix."""
    if probs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    cum = np.cumsum(probs, axis=-1)
    cum /= cum[:, -1:]
    u = rng.random((probs.shape[0], 1))
    idx = (u > cum).sum(axis=-1)
    return np.minimum(idx, probs.shape[1] - 1).astype(np.int64)


def _logprob_of(logits: np.ndarray, idx: np.ndarray, tau: float) -> float:
    if idx.size == 0:
        return 0.0
    lp = T.log_softmax_np(logits, tau=tau)
    return float(lp[np.arange(len(idx)), idx].sum())


def sample_edit(policy: PolicyOutput, phase: Phase, tau: float,
                rng: np.random.Generator) -> tuple[EditAction, float]:
    """Sample one action from tempered per-position distributions.

    Returns the action and the summed log-probability of its components
    at temperature ``tau``.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits_t = {"delete": policy.delete_logits, "insert": policy.insert_logits,
                "replace": policy.token_logits}[phase]
    if logits_t is None:
        raise ValueError(f"policy output carries no logits for phase {phase!r}")
    logits = logits_t.data
    idx = sample_categorical(T.softmax_np(logits, tau=tau), rng)
    lp = _logprob_of(logits, idx, tau)
    payload = tuple(int(i) for i in idx)
    if phase == "delete":
        action = EditAction("delete", delete_mask=payload)
    elif phase == "insert":
        action = EditAction("insert", insert_counts=payload)
    else:
        action = EditAction("replace", replace_tokens=payload)
    return action, lp


def action_log_prob(policy: PolicyOutput, action: EditAction, tau: float) -> float:
    """Re-score an action under the same tempered distributions."""
    logits_t = {"delete": policy.delete_logits, "insert": policy.insert_logits,
                "replace": policy.token_logits}[action.kind]
    if logits_t is None:
        raise ValueError(f"policy output carries no logits for {action.kind!r}")
    idx = np.asarray(action.payload, dtype=np.int64)
    if idx.shape[0] != logits_t.data.shape[0]:
        raise ShapeError("action payload does not match policy shape")
    return _logprob_of(logits_t.data, idx, tau)


# -- batched decoding machinery ---------------------------------------------------


def _phase_logits(model: EditPolicyModel, states: list[list[int]],
                  enc: EncodedBatch, rows: list[int], phase: Phase) -> list[np.ndarray]:
    """Per-row valid logits for one phase over the selected rows."""
    ids, lengths = pad_batch([states[r] for r in rows])
    sub = EncodedBatch(T.take(enc.memory, rows, axis=0),
                       enc.src_mask[rows]) if len(rows) != len(states) or \
        any(i != r for i, r in enumerate(rows)) else enc
    trunk = model.decode_trunk(ids, sub)
    out: list[np.ndarray] = []
    if phase == "delete":
        logits = model.delete_logits_batch(trunk).data
        for i, r in enumerate(rows):
            out.append(logits[i, 1:lengths[i] - 1])
    elif phase == "insert":
        logits = model.insert_logits_batch(trunk).data
        for i, r in enumerate(rows):
            out.append(logits[i, :lengths[i] - 1])
    else:
        logits = model.token_logits_batch(trunk).data
        for i, r in enumerate(rows):
            pos = [j for j, t in enumerate(states[r][:lengths[i]]) if t == PLH]
            out.append(logits[i, pos])
    return out


def greedy_decode_batch(model: EditPolicyModel, sources: Sequence[Sequence[int]],
                        max_iters: int = 10, return_iterations: bool = False):
    """Argmax refinement from null hypotheses with the fixed-point stop rule.

    A row stops once two consecutive iterations return the same output, or
    after ``max_iters`` iterations.
    """
    cfg = model.config
    n = len(sources)
    iters_used = [0] * n
    with no_grad():
        enc = model.encode_batch(sources)
        states: list[list[int]] = [[BOS, EOS] for _ in range(n)]
        prev_out: list[tuple[int, ...] | None] = [None] * n
        active = list(range(n))
        for _ in range(max_iters):
            if not active:
                break
            for r in active:
                iters_used[r] += 1
            # delete (identity on rows with no deletable positions)
            if any(len(states[r]) > 2 for r in active):
                for r, lg in zip(active, _phase_logits(model, states, enc, active, "delete")):
                    mask = lg.argmax(axis=-1)
                    states[r] = list(apply_delete(Hypothesis(tuple(states[r])), mask).tokens)
            # insert
            for r, lg in zip(active, _phase_logits(model, states, enc, active, "insert")):
                counts = lg.argmax(axis=-1)
                counts, _ = clamp_insert_counts(Hypothesis(tuple(states[r])), counts,
                                                cfg.max_seq_len)
                states[r] = list(apply_insert(Hypothesis(tuple(states[r])), counts,
                                              max_placeholders=cfg.max_placeholders,
                                              max_seq_len=cfg.max_seq_len).tokens)
            # replace
            if any(PLH in states[r] for r in active):
                for r, lg in zip(active, _phase_logits(model, states, enc, active, "replace")):
                    fills = _greedy_fills(lg)
                    states[r] = list(apply_replace(Hypothesis(tuple(states[r])), fills).tokens)
            still = []
            for r in active:
                out = tuple(states[r])
                if prev_out[r] is not None and out == prev_out[r]:
                    continue
                prev_out[r] = out
                still.append(r)
            active = still
    hyps = [Hypothesis(tuple(s)) for s in states]
    if return_iterations:
        return hyps, iters_used
    return hyps


def _greedy_fills(logits: np.ndarray) -> np.ndarray:
    return logits.argmax(axis=-1) if logits.size else np.zeros(0, dtype=np.int64)


def greedy_decode(model: EditPolicyModel, source: Sequence[int],
                  max_iters: int = 10) -> Hypothesis:
    return greedy_decode_batch(model, [list(source)], max_iters=max_iters)[0]


# -- sampled rollouts ----------------------------------------------------------------


def rollout_batch(model: EditPolicyModel, sources: Sequence[Sequence[int]],
                  n_iterations: int, tau: float,
                  rngs: Sequence[np.random.Generator],
                  references: Sequence[Sequence[int]] | None = None,
                  record_step_bleu: bool = False,
                  enc: EncodedBatch | None = None,
                  smoothing: str = "addone") -> list[EditTrace]:
    """Temperature-sampled rollouts from null hypotheses, in lockstep.

    Iteration 1 performs insert+replace only (a null string offers nothing to
    delete); later iterations run delete, insert, replace.  Per-row RNG
    streams keep each trace independent of batch composition.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    if record_step_bleu and references is None:
        raise ValueError("record_step_bleu requires references")
    if len(rngs) != len(sources):
        raise ValueError("one rng stream per source is required")
    cfg = model.config
    n = len(sources)
    traces = [EditTrace(source=tuple(s)) for s in sources]
    states: list[list[int]] = [[BOS, EOS] for _ in range(n)]
    rows = list(range(n))

    def bleu_of(row: int, tokens: Sequence[int]) -> float | None:
        if not record_step_bleu:
            return None
        content = [t for t in tokens[1:-1]]
        return sentence_bleu(content, list(references[row]), smoothing=smoothing)

    def record(row: int, iteration: int, action: EditAction, before, after,
               lp: float, flagged: bool, scored: bool) -> None:
        traces[row].steps.append(EditStep(
            iteration=iteration, action=action, before=before, after=after,
            log_prob=lp, flagged=flagged,
            step_bleu=bleu_of(row, after.tokens) if scored else None))

    with no_grad():
        if enc is None:
            enc = model.encode_batch(sources)
        for it in range(1, n_iterations + 1):
            if it > 1:
                for r, lg in zip(rows, _phase_logits(model, states, enc, rows, "delete")):
                    idx = sample_categorical(T.softmax_np(lg, tau=tau), rngs[r])
                    lp = _logprob_of(lg, idx, tau)
                    before = Hypothesis(tuple(states[r]))
                    action = EditAction("delete", delete_mask=tuple(int(i) for i in idx))
                    after = apply_delete(before, idx)
                    states[r] = list(after.tokens)
                    record(r, it, action, before, after, lp, False, scored=True)
            for r, lg in zip(rows, _phase_logits(model, states, enc, rows, "insert")):
                idx = sample_categorical(T.softmax_np(lg, tau=tau), rngs[r])
                before = Hypothesis(tuple(states[r]))
                counts, flagged = clamp_insert_counts(before, idx, cfg.max_seq_len)
                idx = np.asarray(counts, dtype=np.int64)
                lp = _logprob_of(lg, idx, tau)  # clamped action re-scored
                action = EditAction("insert", insert_counts=tuple(int(c) for c in counts))
                after = apply_insert(before, counts,
                                     max_placeholders=cfg.max_placeholders,
                                     max_seq_len=cfg.max_seq_len)
                states[r] = list(after.tokens)
                record(r, it, action, before, after, lp, flagged, scored=False)
            for r, lg in zip(rows, _phase_logits(model, states, enc, rows, "replace")):
                idx = sample_categorical(T.softmax_np(lg, tau=tau), rngs[r])
                lp = _logprob_of(lg, idx, tau)
                before = Hypothesis(tuple(states[r]))
                action = EditAction("replace", replace_tokens=tuple(int(i) for i in idx))
                after = apply_replace(before, idx)
                states[r] = list(after.tokens)
                record(r, it, action, before, after, lp, False, scored=True)
    return traces


def rollout(model: EditPolicyModel, source: Sequence[int], n_iterations: int,
            tau: float, rng: np.random.Generator,
            record_step_bleu: bool = False,
            reference: Sequence[int] | None = None,
            smoothing: str = "addone") -> EditTrace:
    refs = [list(reference)] if reference is not None else None
    return rollout_batch(model, [list(source)], n_iterations, tau, [rng],
                         references=refs, record_step_bleu=record_step_bleu,
                         smoothing=smoothing)[0]


def rescore_trace(model: EditPolicyModel, trace: EditTrace, tau: float) -> list[float]:
    """Recompute each step's log-prob under the recorded temperature."""
    out: list[float] = []
    with no_grad():
        memory = model.encode(list(trace.source))
        for step in trace.steps:
            policy = model.policy(step.before, memory, step.action.kind)
            out.append(action_log_prob(policy, step.action, tau))
    return out


# -- trace dump (line-delimited JSON) ---------------------------------------------


def trace_to_record(trace: EditTrace, reference: Sequence[int] | None = None) -> dict:
    return {
        "source": list(trace.source),
        "reference": list(reference) if reference is not None else None,
        "flagged": trace.flagged,
        "final": list(trace.final_hypothesis.tokens),
        "steps": [
            {
                "iteration": s.iteration,
                "phase": s.action.kind,
                "before": list(s.before.tokens),
                "after": list(s.after.tokens),
                "log_prob": s.log_prob,
                "bleu": s.step_bleu,
            }
            for s in trace.steps
        ],
    }


def dump_traces(path, traces: Iterable[EditTrace],
                references: Sequence[Sequence[int]] | None = None) -> None:
    with open(path, "w") as fh:
        for i, tr in enumerate(traces):
            ref = references[i] if references is not None else None
            fh.write(json.dumps(trace_to_record(tr, ref)) + "\n")


def load_trace_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
