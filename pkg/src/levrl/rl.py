"""REINFORCE fine-tuning with a leave-one-out baseline.

Two update rules over the pretrained edit policy:

* episodic — k independent rollouts per source; the final sentence BLEU
  weights the summed log-probability of every action in a trajectory.
* stepwise — a walk over the merged edit slots (iteration 1: insert+replace;
  later iterations: delete, then insert+replace).  Each slot branches into k
  candidate actions rewarded by the BLEU difference from one previous edit;
  the advantage weights only that slot's action log-probability, and the walk
  continues from one candidate chosen uniformly at random.

Both rules share the baseline b_i = mean of the other k-1 rewards, so the
advantages of a sample set always sum to zero.  Temperature schedules
(constant, geometric decay, geometric growth) control the sampling softmax.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .bleu import sentence_bleu
from .editing import (Hypothesis, _phase_logits, apply_delete, apply_insert,
                      apply_replace, clamp_insert_counts, rollout_batch,
                      sample_categorical)
from .errors import ConfigError
from .model import EditPolicyModel, EncodedBatch, pad_batch, save_model
from .seeding import substream
from .supervised import evaluate_corpus
from .tensor import Parameter, Tensor, no_grad
from .vocab import PLH

INS_REP = "insert+replace"
DELETE = "delete"


# -- leave-one-out baseline --------------------------------------------------------


def loo_baseline(rewards: Sequence[float], i: int) -> float:
    """b_i = mean of the other k-1 rewards."""
    k = len(rewards)
    if k < 2:
        raise ValueError(f"leave-one-out baseline needs k >= 2, got {k}")
    total = float(np.sum(rewards))
    return (total - float(rewards[i])) / (k - 1)


def advantages(rewards: Sequence[float]) -> np.ndarray:
    """r_i - b_i for every sample; sums to zero up to float error."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[0] < 2:
        raise ValueError(f"leave-one-out baseline needs k >= 2, got {r.shape[0]}")
    total = r.sum()
    return r - (total - r) / (r.shape[0] - 1)


@dataclass(frozen=True)
class RewardedSampleSet:
    """k rewarded samples with their leave-one-out baselines and advantages."""

    rewards: tuple[float, ...]
    baselines: tuple[float, ...]
    advantages: tuple[float, ...]

    @classmethod
    def from_rewards(cls, rewards: Sequence[float]) -> "RewardedSampleSet":
        adv = advantages(rewards)
        r = np.asarray(rewards, dtype=np.float64)
        return cls(rewards=tuple(r.tolist()),
                   baselines=tuple((r - adv).tolist()),
                   advantages=tuple(adv.tolist()))

    @property
    def k(self) -> int:
        return len(self.rewards)


def two_action_probe(rule: str, seed: int, updates: int = 300, k: int = 5,
                     tau: float = 1.0, lr: float = 0.5) -> float:
    """Drive the REINFORCE estimator on a two-action policy; returns final p(A).

    Action A always earns reward 1, action B reward 0.  The loss is composed
    exactly as the training updates compose it: k sampled actions, rewards
    (terminal for ``episodic``, difference from the zero-reward start state
    for ``stepwise`` — identical on this one-slot task), leave-one-out
    advantages weighting each action's log-prob, one SGD step.
    """
    if rule not in ("episodic", "stepwise"):
        raise ValueError(f"unknown rule {rule!r}")
    from .editing import sample_categorical
    logits = Parameter(np.zeros(2), "probe.logits")
    rng = substream(seed, "two-action", rule)
    start_value = 0.0  # BLEU of the empty start state
    for _ in range(updates):
        probs = T.softmax_np(logits.data, tau=tau)
        actions = sample_categorical(np.repeat(probs[None, :], k, axis=0), rng)
        terminal = (actions == 0).astype(np.float64)
        rewards = terminal if rule == "episodic" else terminal - start_value
        adv = advantages(rewards)
        if not np.any(adv):
            continue
        tiled = T.take(T.reshape(logits, (1, 2)), np.zeros(k, dtype=np.int64), axis=0)
        lp = T.log_prob(tiled, actions, tau=tau)
        loss = T.mul(T.tsum(T.mul(lp, Tensor(adv.astype(T.default_dtype())))), -1.0)
        logits.grad = None
        loss.backward()
        T.sgd_step([logits], lr, clip_norm=1.0)
    return float(T.softmax_np(logits.data, tau=1.0)[0])


# -- temperature schedules ----------------------------------------------------------


@dataclass
class TemperatureSchedule:
    """Constant / geometric-decay / geometric-growth temperature over steps."""

    kind: str = "constant"          # constant | anneal_down | anneal_up
    tau0: float = 1.0
    tauT: float = 1.0
    total_steps: int = 1
    current_step: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "anneal_down", "anneal_up"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.tau0 <= 0 or self.tauT <= 0:
            raise ValueError("temperatures must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.kind == "anneal_down" and self.tau0 < self.tauT:
            raise ValueError("anneal_down requires tau0 >= tauT")
        if self.kind == "anneal_up" and self.tau0 > self.tauT:
            raise ValueError("anneal_up requires tau0 <= tauT")

    def next_temperature(self) -> float:
        tau = temperature_at(self, self.current_step)
        self.current_step += 1
        return tau


def temperature_at(schedule: TemperatureSchedule, step: int) -> float:
    """Temperature after ``step`` applications of the schedule's update rule.

    Decay multiplies by exp(-log(tau0/tauT)/T) with floor tauT; growth divides
    by exp(-log(tauT/tau0)/T) with ceiling tauT; steps past T stay clamped.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    if schedule.kind == "constant":
        return schedule.tau0
    t0, tT, total = schedule.tau0, schedule.tauT, schedule.total_steps
    if schedule.kind == "anneal_down":
        if t0 == tT:
            return tT
        return max(t0 * math.exp(-step * math.log(t0 / tT) / total), tT)
    if t0 == tT:
        return tT
    return min(t0 * math.exp(step * math.log(tT / t0) / total), tT)


# -- advantage diagnostics ------------------------------------------------------------


def slot_order(n_iterations: int) -> list[tuple[int, str]]:
    slots: list[tuple[int, str]] = [(1, INS_REP)]
    for it in range(2, n_iterations + 1):
        slots.extend([(it, DELETE), (it, INS_REP)])
    return slots


class AdvantageStats:
    """Running per-slot mean/SD of advantages (Welford single-pass update)."""

    def __init__(self, n_iterations: int = 3):
        self.n_iterations = n_iterations
        self._acc: dict[tuple[int, str], list[float]] = {
            slot: [0, 0.0, 0.0] for slot in slot_order(n_iterations)}

    def record(self, slot: tuple[int, str], values: Sequence[float]) -> None:
        if slot not in self._acc:
            raise ValueError(f"unknown advantage slot {slot}")
        acc = self._acc[slot]
        for v in values:
            acc[0] += 1
            delta = v - acc[1]
            acc[1] += delta / acc[0]
            acc[2] += delta * (v - acc[1])

    def count(self, slot: tuple[int, str]) -> int:
        return int(self._acc[slot][0])

    def mean(self, slot: tuple[int, str]) -> float:
        return self._acc[slot][1]

    def sd(self, slot: tuple[int, str]) -> float:
        n, _, m2 = self._acc[slot]
        if n < 2:
            return 0.0
        return math.sqrt(m2 / (n - 1))

    def rows(self) -> list[dict]:
        return [{"iteration": it, "operation": op, "sd": self.sd((it, op)),
                 "mean": self.mean((it, op)), "count": self.count((it, op))}
                for it, op in slot_order(self.n_iterations)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "operation", "sd"])
            for row in self.rows():
                writer.writerow([row["iteration"], row["operation"],
                                 f"{row['sd']:.6f}"])

    def to_json(self) -> str:
        return json.dumps({"n_iterations": self.n_iterations,
                           "slots": [{"iteration": it, "operation": op,
                                      "acc": self._acc[(it, op)]}
                                     for it, op in slot_order(self.n_iterations)]})

    @classmethod
    def from_json(cls, text: str) -> "AdvantageStats":
        raw = json.loads(text)
        stats = cls(raw["n_iterations"])
        for slot in raw["slots"]:
            stats._acc[(slot["iteration"], slot["operation"])] = list(slot["acc"])
        return stats


def record_advantage_stats(stats: AdvantageStats, slot: tuple[int, str],
                           advantage_values: Sequence[float]) -> None:
    stats.record(slot, advantage_values)


# -- configuration ---------------------------------------------------------------------


@dataclass
class RLConfig:
    approach: str = "episodic"           # episodic | stepwise
    steps: int = 5000
    batch_size: int = 8
    lr: float = 0.02                     # plain-SGD scale; see SupervisedConfig.lr
    k: int = 5
    n_iterations: int = 3
    schedule_kind: str = "constant"      # constant | anneal_down | anneal_up
    tau0: float = 1.0
    tauT: float = 1.0
    reward_smoothing: str = "addone"     # addone | none
    clip_norm: float = 1.0
    eval_every: int = 500
    eval_max_examples: int = 200

    def validate(self) -> None:
        problems = []
        if self.approach not in ("episodic", "stepwise"):
            problems.append(f"unknown approach {self.approach!r}")
        if self.k < 2:
            problems.append("k must be >= 2 for the leave-one-out baseline")
        if self.n_iterations < 1:
            problems.append("n_iterations must be >= 1")
        if self.reward_smoothing not in ("addone", "none"):
            problems.append(f"unknown reward smoothing {self.reward_smoothing!r}")
        try:
            self.schedule()
        except ValueError as e:
            problems.append(str(e))
        if problems:
            raise ConfigError("; ".join(problems))

    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(kind=self.schedule_kind, tau0=self.tau0,
                                   tauT=self.tauT, total_steps=self.steps)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RLStepReport:
    mean_reward: float
    mean_abs_advantage: float
    grad_norm: float
    loss: float
    slot_advantages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slot_advantages"] = {f"{it}:{op}": v for (it, op), v
                                in self.slot_advantages.items()}
        return d


# -- shared scoring machinery ------------------------------------------------------------


def _replicated(enc: EncodedBatch, row_src: np.ndarray) -> EncodedBatch:
    return EncodedBatch(T.take(enc.memory, row_src, axis=0), enc.src_mask[row_src])


def _phase_score_term(model: EditPolicyModel, enc: EncodedBatch,
                      row_src: np.ndarray, states: list[list[int]],
                      payloads: list[np.ndarray], phase: str, tau: float,
                      weights: np.ndarray) -> Tensor:
    """Sum over rows of weight * log-prob of the recorded action (graph-enabled)."""
    ids, lengths = pad_batch(states)
    trunk = model.decode_trunk(ids, _replicated(enc, row_src))
    width = ids.shape[1]
    pos = np.arange(width)[None, :]
    if phase == "delete":
        logits = model.delete_logits_batch(trunk)
        mask = ((pos >= 1) & (pos < lengths[:, None] - 1)).astype(np.float64)
        targets = np.zeros(ids.shape, dtype=np.int64)
        for r, payload in enumerate(payloads):
            targets[r, 1:1 + len(payload)] = payload
    elif phase == "insert":
        logits = model.insert_logits_batch(trunk)
        width = width - 1
        pos = np.arange(width)[None, :]
        mask = (pos < lengths[:, None] - 1).astype(np.float64)
        targets = np.zeros((ids.shape[0], width), dtype=np.int64)
        for r, payload in enumerate(payloads):
            targets[r, : len(payload)] = payload
    else:
        logits = model.token_logits_batch(trunk)
        mask = (ids == PLH).astype(np.float64)
        targets = np.zeros(ids.shape, dtype=np.int64)
        for r, payload in enumerate(payloads):
            targets[r, ids[r] == PLH] = payload
    flat = T.reshape(logits, (-1, logits.shape[-1]))
    lp = T.log_prob(flat, targets.reshape(-1), tau=tau)
    coeff = (mask * weights[:, None]).reshape(-1)
    return T.tsum(T.mul(lp, Tensor(coeff.astype(T.default_dtype()))))


def _score_group(model: EditPolicyModel, enc: EncodedBatch, phase: str,
                 tau: float,
                 group: list[tuple[list[int], np.ndarray, float, int]]) -> Tensor | None:
    """Score one same-phase group of (state, payload, weight, src_row) items.

    Zero-weight items are dropped; groups come from one decoding step, so
    their states pad tightly.
    """
    group = [it for it in group if it[2] != 0.0]
    if not group:
        return None
    states = [it[0] for it in group]
    payloads = [it[1] for it in group]
    weights = np.array([it[2] for it in group], dtype=np.float64)
    rows = np.array([it[3] for it in group], dtype=np.int64)
    return _phase_score_term(model, enc, rows, states, payloads, phase, tau, weights)


def _finish_update(model: EditPolicyModel, terms: list[Tensor], batch_size: int,
                   lr: float, clip_norm: float | None) -> tuple[float, float]:
    """Backward + SGD on loss = -(sum of terms)/batch_size; returns (loss, norm)."""
    total = terms[0] if len(terms) == 1 else sum(terms[1:], terms[0])
    loss = T.mul(total, -1.0 / batch_size)
    model.zero_grads()
    loss.backward()
    T.ensure_grads(model.parameters())
    norm = T.sgd_step(model.parameters(), lr, clip_norm=clip_norm)
    return float(loss.data), norm


# -- episodic reward maximization -----------------------------------------------------------


def episodic_update(model: EditPolicyModel,
                    batch: Sequence[tuple[list[int], list[int]]], k: int,
                    tau: float, lr: float, *, n_iterations: int = 3,
                    seed: int = 0, step: int = 0, smoothing: str = "addone",
                    clip_norm: float | None = 1.0) -> RLStepReport:
    """One REINFORCE step on terminal sentence-BLEU rewards.

    Per source, k independent rollouts from the null string; each trajectory's
    advantage weights the sum of all its action log-probs.
    """
    if not batch:
        raise ValueError("empty batch")
    if k < 2:
        raise ValueError("k must be >= 2")
    b = len(batch)
    sources = [list(src) for src, _ in batch]
    refs = [list(tgt) for _, tgt in batch]
    row_src = np.repeat(np.arange(b), k)

    enc = model.encode_batch(sources)
    enc_sample = EncodedBatch(Tensor(enc.memory.data[row_src].copy()),
                              enc.src_mask[row_src])
    rngs = [substream(seed, "rollout", step, int(s), i)
            for s in range(b) for i in range(k)]
    traces = rollout_batch(model, [sources[s] for s in row_src], n_iterations,
                           tau, rngs, enc=enc_sample)

    rewards = np.array([
        sentence_bleu(list(tr.final_hypothesis.content), refs[r // k],
                      smoothing=smoothing)
        for r, tr in enumerate(traces)], dtype=np.float64)
    sample_sets = [RewardedSampleSet.from_rewards(rewards[s * k:(s + 1) * k])
                   for s in range(b)]
    adv = np.concatenate([ss.advantages for ss in sample_sets])
    report = RLStepReport(mean_reward=float(rewards.mean()),
                          mean_abs_advantage=float(np.abs(adv).mean()),
                          grad_norm=0.0, loss=0.0)
    if not np.any(adv):
        return report  # collapsed policy: exactly zero update

    terms: list[Tensor] = []
    for s_idx in range(len(traces[0].steps)):
        phase = traces[0].steps[s_idx].action.kind
        group = [(list(tr.steps[s_idx].before.tokens),
                  np.asarray(tr.steps[s_idx].action.payload, dtype=np.int64),
                  float(adv[r]), int(row_src[r]))
                 for r, tr in enumerate(traces)]
        term = _score_group(model, enc, phase, tau, group)
        if term is not None:
            terms.append(term)
    report.loss, report.grad_norm = _finish_update(model, terms, b, lr, clip_norm)
    return report


# -- stepwise reward maximization -------------------------------------------------------------


def _sample_phase_batch(model: EditPolicyModel, enc_sample: EncodedBatch,
                        states: list[list[int]], phase: str, tau: float,
                        rngs: list[np.random.Generator]) -> tuple[list[np.ndarray], list[float]]:
    """Sample one action per row for a phase; returns (payloads, log_probs)."""
    rows = list(range(len(states)))
    payloads: list[np.ndarray] = []
    lps: list[float] = []
    with no_grad():
        for r, lg in zip(rows, _phase_logits(model, states, enc_sample, rows, phase)):
            idx = sample_categorical(T.softmax_np(lg, tau=tau), rngs[r])
            lp = T.log_softmax_np(lg, tau=tau)
            lps.append(float(lp[np.arange(len(idx)), idx].sum()) if idx.size else 0.0)
            payloads.append(idx)
    return payloads, lps


def stepwise_update(model: EditPolicyModel,
                    batch: Sequence[tuple[list[int], list[int]]], k: int,
                    tau: float, lr: float, *, n_iterations: int = 3,
                    seed: int = 0, step: int = 0, smoothing: str = "addone",
                    clip_norm: float | None = 1.0,
                    stats: AdvantageStats | None = None) -> RLStepReport:
    """One REINFORCE step on per-edit BLEU differences.

    Walks the merged edit slots; at each slot k candidate actions branch from
    the current state, earn r = BLEU(after) - BLEU(before), and contribute
    -(r_i - b_i) * log-prob of that slot's action only.  One candidate state,
    chosen uniformly, continues the walk.
    """
    if not batch:
        raise ValueError("empty batch")
    if k < 2:
        raise ValueError("k must be >= 2")
    b = len(batch)
    cfg = model.config
    sources = [list(src) for src, _ in batch]
    refs = [list(tgt) for _, tgt in batch]
    row_src = np.repeat(np.arange(b), k)

    enc = model.encode_batch(sources)
    enc_sample = EncodedBatch(Tensor(enc.memory.data[row_src].copy()),
                              enc.src_mask[row_src])
    rngs = [substream(seed, "stepwise", step, int(s), i)
            for s in range(b) for i in range(k)]
    walk_rngs = [substream(seed, "stepwise-walk", step, s) for s in range(b)]

    cur = [Hypothesis.null() for _ in range(b)]
    cur_bleu = [sentence_bleu(list(h.content), refs[s], smoothing=smoothing)
                if h.content else 0.0 for s, h in enumerate(cur)]
    slot_report: dict[tuple[int, str], float] = {}
    all_abs_adv: list[float] = []
    last_rewards: np.ndarray | None = None
    terms: list[Tensor] = []

    for iteration, op in slot_order(n_iterations):
        before_states = [list(cur[s].tokens) for s in range(b) for _ in range(k)]
        if op == DELETE:
            payloads, _ = _sample_phase_batch(model, enc_sample, before_states,
                                              "delete", tau, rngs)
            after = [apply_delete(Hypothesis(tuple(before_states[r])), payloads[r])
                     for r in range(b * k)]
            slot_groups = [("delete", before_states, payloads)]
        else:
            ins_payloads, _ = _sample_phase_batch(model, enc_sample, before_states,
                                                  "insert", tau, rngs)
            mids = []
            for r in range(b * k):
                hyp = Hypothesis(tuple(before_states[r]))
                counts, _ = clamp_insert_counts(hyp, ins_payloads[r], cfg.max_seq_len)
                ins_payloads[r] = np.asarray(counts, dtype=np.int64)
                mids.append(apply_insert(hyp, counts,
                                         max_placeholders=cfg.max_placeholders,
                                         max_seq_len=cfg.max_seq_len))
            mid_states = [list(m.tokens) for m in mids]
            rep_payloads, _ = _sample_phase_batch(model, enc_sample, mid_states,
                                                  "replace", tau, rngs)
            after = [apply_replace(mids[r], rep_payloads[r]) for r in range(b * k)]
            slot_groups = [("insert", before_states, ins_payloads),
                           ("replace", mid_states, rep_payloads)]

        after_bleu = np.array([
            sentence_bleu(list(after[r].content), refs[r // k], smoothing=smoothing)
            if after[r].content else 0.0 for r in range(b * k)], dtype=np.float64)
        rewards = after_bleu - np.repeat(cur_bleu, k)
        sample_sets = [RewardedSampleSet.from_rewards(rewards[s * k:(s + 1) * k])
                       for s in range(b)]
        adv = np.concatenate([ss.advantages for ss in sample_sets])
        if stats is not None:
            stats.record((iteration, op), adv.tolist())
        slot_report[(iteration, op)] = float(np.abs(adv).mean())
        all_abs_adv.extend(abs(a) for a in adv)
        # the advantage weights only this slot's action log-prob
        for phase, states_g, payloads_g in slot_groups:
            term = _score_group(model, enc, phase, tau,
                                [(states_g[r], payloads_g[r], float(adv[r]),
                                  int(row_src[r])) for r in range(b * k)])
            if term is not None:
                terms.append(term)
        # continue the walk from one uniformly chosen candidate per source
        for s in range(b):
            pick = int(walk_rngs[s].integers(0, k))
            cur[s] = after[s * k + pick]
            cur_bleu[s] = float(after_bleu[s * k + pick])
        last_rewards = after_bleu

    report = RLStepReport(
        mean_reward=float(last_rewards.mean()) if last_rewards is not None else 0.0,
        mean_abs_advantage=float(np.mean(all_abs_adv)) if all_abs_adv else 0.0,
        grad_norm=0.0, loss=0.0, slot_advantages=slot_report)
    if terms:
        report.loss, report.grad_norm = _finish_update(model, terms, b, lr, clip_norm)
    return report


# -- fine-tuning loop -----------------------------------------------------------------------


def rl_finetune(model: EditPolicyModel,
                train_pairs: Sequence[tuple[list[int], list[int]]],
                valid_pairs: Sequence[tuple[list[int], list[int]]],
                cfg: RLConfig, seed: int, out_dir: Path | str,
                label: str | None = None) -> dict:
    """Run the chosen update rule under the temperature schedule.

    Writes per-step metrics (JSONL), a final checkpoint, and, for stepwise
    runs, the advantage-SD table (CSV + JSON accumulator state).
    """
    cfg.validate()
    if not train_pairs:
        raise ValueError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = label or cfg.approach
    schedule = cfg.schedule()
    stats = AdvantageStats(cfg.n_iterations) if cfg.approach == "stepwise" else None
    metrics_path = out_dir / f"rl_{name}_metrics.jsonl"
    update = episodic_update if cfg.approach == "episodic" else stepwise_update
    t0 = time.time()
    history: list[dict] = []
    with open(metrics_path, "a") as fh:
        for step in range(cfg.steps):
            tau = temperature_at(schedule, step)
            rng = substream(seed, "rl-batch", step)
            idx = rng.integers(0, len(train_pairs), size=cfg.batch_size)
            batch = [train_pairs[i] for i in idx]
            kwargs = dict(n_iterations=cfg.n_iterations, seed=seed, step=step,
                          smoothing=cfg.reward_smoothing, clip_norm=cfg.clip_norm)
            if cfg.approach == "stepwise":
                kwargs["stats"] = stats
            report = update(model, batch, cfg.k, tau, cfg.lr, **kwargs)
            heldout = None
            if valid_pairs and ((step + 1) % cfg.eval_every == 0
                                or step + 1 == cfg.steps):
                heldout = evaluate_corpus(model, valid_pairs,
                                          max_examples=cfg.eval_max_examples)
            record = {"step": step, "tau": tau,
                      "mean_reward": report.mean_reward,
                      "mean_abs_advantage": report.mean_abs_advantage,
                      "grad_norm": report.grad_norm,
                      "heldout_bleu": heldout}
            fh.write(json.dumps(record) + "\n")
            history.append(record)
    ckpt_path = out_dir / f"rl_{name}.npz"
    save_model(ckpt_path, model,
               extra={"stage": "rl", "approach": cfg.approach, "seed": seed,
                      "rl_config": cfg.to_dict()})
    summary = {"checkpoint": str(ckpt_path), "metrics": str(metrics_path),
               "history": history, "wall_seconds": time.time() - t0,
               "heldout_bleu": (evaluate_corpus(model, valid_pairs,
                                                max_examples=cfg.eval_max_examples)
                                if valid_pairs else None)}
    if stats is not None:
        sd_path = out_dir / f"advantage_sd_{name}.csv"
        stats.write_csv(sd_path)
        (out_dir / f"advantage_stats_{name}.json").write_text(stats.to_json())
        summary["advantage_sd_csv"] = str(sd_path)
        summary["advantage_rows"] = stats.rows()
    return summary


SWEEP_SETTINGS: list[tuple[str, str, float, float]] = [
    ("constant_tau1.0", "constant", 1.0, 1.0),
    ("constant_tau0.5", "constant", 0.5, 0.5),
    ("constant_tau0.1", "constant", 0.1, 0.1),
    ("anneal_1.0_to_0.1", "anneal_down", 1.0, 0.1),
    ("anneal_0.1_to_1.0", "anneal_up", 0.1, 1.0),
]


def run_temperature_sweep(make_model, train_pairs, valid_pairs, cfg: RLConfig,
                          seed: int, out_dir: Path | str) -> list[dict]:
    """Fine-tune once per temperature setting; emit the comparison table.

    ``make_model`` builds a fresh model from the pretrained checkpoint so
    every setting starts from identical parameters.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for name, kind, tau0, tauT in SWEEP_SETTINGS:
        run_cfg = RLConfig(**{**cfg.to_dict(),
                              "schedule_kind": kind, "tau0": tau0, "tauT": tauT})
        model = make_model()
        summary = rl_finetune(model, train_pairs, valid_pairs, run_cfg, seed,
                              out_dir / name, label=name)
        rows.append({"schedule": name, "final_bleu": summary["heldout_bleu"]})
    table = out_dir / "temperature_sweep.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schedule", "final_corpus_bleu_x100"])
        for row in rows:
            bleu = row["final_bleu"]
            writer.writerow([row["schedule"],
                             f"{bleu * 100:.2f}" if bleu is not None else ""])
    return rows
