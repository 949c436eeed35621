import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import levrl.tensor as T
from levrl.editing import (EditAction, Hypothesis, action_log_prob,
                           apply_delete, apply_insert, apply_replace,
                           clamp_insert_counts, dump_traces, greedy_decode,
                           greedy_decode_batch, load_trace_records,
                           rescore_trace, rollout, sample_categorical,
                           sample_edit)
from levrl.errors import LengthError, ShapeError, StateError, VocabularyError
from levrl.model import EditPolicyModel, ModelConfig, PolicyOutput
from levrl.seeding import substream
from levrl.vocab import BOS, EOS, PLH

TINY = ModelConfig(vocab_size=12, d_model=16, n_heads=2, n_encoder_layers=1,
                   n_decoder_layers=1, ffn_dim=24, max_placeholders=6,
                   max_seq_len=16)


@pytest.fixture(scope="module")
def model():
    return EditPolicyModel(TINY, substream(5, "init"))


class TestApplyDelete:
    def test_definition(self):
        hyp = Hypothesis((BOS, 5, 6, 7, EOS))
        assert apply_delete(hyp, [0, 1, 0]).tokens == (BOS, 5, 7, EOS)

    def test_all_keep_identity(self):
        hyp = Hypothesis((BOS, 5, 6, EOS))
        assert apply_delete(hyp, [0, 0]).tokens == hyp.tokens

    def test_all_delete_annihilation(self):
        hyp = Hypothesis((BOS, 5, 6, EOS))
        assert apply_delete(hyp, [1, 1]).tokens == (BOS, EOS)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            apply_delete(Hypothesis((BOS, 5, EOS)), [0, 0])

    def test_placeholder_state_rejected(self):
        hyp = Hypothesis((BOS, PLH, EOS))
        with pytest.raises(StateError):
            apply_delete(hyp, [0])


class TestApplyInsert:
    def test_definition(self):
        out = apply_insert(Hypothesis.null(), [3], max_placeholders=6,
                           max_seq_len=16)
        assert out.tokens == (BOS, PLH, PLH, PLH, EOS)

    def test_zero_counts_identity(self):
        hyp = Hypothesis((BOS, 5, EOS))
        out = apply_insert(hyp, [0, 0], max_placeholders=6, max_seq_len=16)
        assert out.tokens == hyp.tokens

    def test_position_semantics(self):
        hyp = Hypothesis((BOS, 5, EOS))
        out = apply_insert(hyp, [1, 2], max_placeholders=6, max_seq_len=16)
        assert out.tokens == (BOS, PLH, 5, PLH, PLH, EOS)

    @given(st.lists(st.integers(5, 9), min_size=0, max_size=5),
           st.data())
    @settings(max_examples=200, deadline=None)
    def test_length_arithmetic(self, content, data):
        hyp = Hypothesis.from_content(content)
        counts = data.draw(st.lists(st.integers(0, 3), min_size=hyp.n_gaps,
                                    max_size=hyp.n_gaps))
        out = apply_insert(hyp, counts, max_placeholders=6, max_seq_len=64)
        assert len(out) == len(hyp) + sum(counts)
        assert out.n_placeholders == sum(counts)

    def test_overflow_rejected(self):
        with pytest.raises(LengthError):
            apply_insert(Hypothesis.null(), [6], max_placeholders=6, max_seq_len=6)

    def test_per_gap_cap_rejected(self):
        with pytest.raises(ShapeError):
            apply_insert(Hypothesis.null(), [7], max_placeholders=6, max_seq_len=64)


class TestApplyReplace:
    def test_definition(self):
        hyp = Hypothesis((BOS, PLH, EOS))
        assert apply_replace(hyp, [9]).tokens == (BOS, 9, EOS)

    def test_zero_placeholders_identity(self):
        hyp = Hypothesis((BOS, 5, EOS))
        assert apply_replace(hyp, []).tokens == hyp.tokens

    def test_length_preserved_and_non_plh_untouched(self):
        hyp = Hypothesis((BOS, 5, PLH, 6, PLH, EOS))
        out = apply_replace(hyp, [10, 11])
        assert out.tokens == (BOS, 5, 10, 6, 11, EOS)
        assert len(out) == len(hyp)

    def test_count_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            apply_replace(Hypothesis((BOS, PLH, EOS)), [])

    def test_sentinel_fill_rejected(self):
        with pytest.raises(VocabularyError):
            apply_replace(Hypothesis((BOS, PLH, EOS)), [EOS])


class TestClampInsertCounts:
    def test_rightmost_reduced_first(self):
        hyp = Hypothesis((BOS, 5, EOS))  # len 3, budget 5 with cap 8
        counts, clamped = clamp_insert_counts(hyp, [4, 4], max_seq_len=8)
        assert clamped and counts == [4, 1]

    def test_no_clamp_when_legal(self):
        counts, clamped = clamp_insert_counts(Hypothesis.null(), [3], 16)
        assert not clamped and counts == [3]


class TestSampling:
    def test_fixed_seed_determinism(self, model):
        mem = model.encode([5, 6, 7])
        policy = model.policy(Hypothesis((BOS, 5, 6, EOS)), mem, "insert")
        a1, lp1 = sample_edit(policy, "insert", 0.7, substream(3, "s"))
        a2, lp2 = sample_edit(policy, "insert", 0.7, substream(3, "s"))
        assert a1 == a2 and lp1 == lp2

    def test_log_prob_matches_rescoring(self, model):
        mem = model.encode([5, 6, 7])
        policy = model.policy(Hypothesis((BOS, 5, 6, 7, EOS)), mem, "delete")
        action, lp = sample_edit(policy, "delete", 1.3, substream(9, "s"))
        assert action_log_prob(policy, action, 1.3) == pytest.approx(lp, abs=1e-6)

    def test_near_zero_temperature_is_greedy(self):
        # well-separated logits: tau 0.01 recovers argmax with prob > 0.99
        logits = T.Tensor(np.array([[2.0, 0.0, -1.0], [-1.0, 1.5, 0.0]]))
        policy = PolicyOutput(token_logits=logits)
        rng = substream(17, "mc")
        hits = 0
        n = 10000
        for _ in range(n):
            action, _ = sample_edit(policy, "replace", 0.01, rng)
            hits += action.replace_tokens == (0, 1)
        assert hits / n > 0.99

    def test_invalid_temperature_rejected(self, model):
        mem = model.encode([5])
        policy = model.policy(Hypothesis.null(), mem, "insert")
        with pytest.raises(ValueError):
            sample_edit(policy, "insert", 0.0, substream(0, "s"))

    def test_sampler_never_picks_zero_probability(self):
        probs = np.array([[0.0, 1.0, 0.0]] * 64)
        idx = sample_categorical(probs, substream(1, "z"))
        assert (idx == 1).all()


class TestGreedyDecode:
    def test_untrained_model_terminates_valid(self, model):
        for seed in range(5):
            src = list(substream(seed, "src").integers(5, 12, size=4))
            hyp = greedy_decode(model, src)
            assert hyp.tokens[0] == BOS and hyp.tokens[-1] == EOS
            assert PLH not in hyp.tokens
            assert len(hyp) <= TINY.max_seq_len

    def test_fixed_point_model_stops_after_iteration_two(self):
        # zeroed heads: delete keeps everything, insert picks 0 placeholders
        model = EditPolicyModel(TINY, substream(1, "init"))
        model.w_delete.data[:] = 0
        model.w_insert.data[:] = 0
        hyps, iters = greedy_decode_batch(model, [[5, 6]], return_iterations=True)
        assert hyps[0].tokens == (BOS, EOS)
        assert iters[0] == 2

    def test_max_iters_bound(self, model):
        hyps, iters = greedy_decode_batch(model, [[5, 6, 7]], max_iters=10,
                                          return_iterations=True)
        assert iters[0] <= 10


class TestRollout:
    def test_eight_edits_three_iterations(self, model):
        tr = rollout(model, [5, 6, 7], 3, 1.0, substream(2, "r"))
        assert len(tr.steps) == 8
        kinds = [s.action.kind for s in tr.steps]
        assert kinds == ["insert", "replace", "delete", "insert", "replace",
                         "delete", "insert", "replace"]

    def test_five_reward_slots(self, model):
        tr = rollout(model, [5, 6, 7], 3, 1.0, substream(2, "r"),
                     record_step_bleu=True, reference=[5, 6, 7])
        scored = [s for s in tr.steps if s.step_bleu is not None]
        assert len(scored) == 5
        # merged slots: the insert steps are never scored
        assert all(s.action.kind in ("delete", "replace") for s in scored)

    def test_chained_states(self, model):
        tr = rollout(model, [5, 6], 3, 0.8, substream(4, "r"))
        tr.validate_chain()

    def test_missing_reference_rejected(self, model):
        with pytest.raises(ValueError):
            rollout(model, [5], 3, 1.0, substream(0, "r"), record_step_bleu=True)

    def test_bitwise_determinism(self, model):
        t1 = rollout(model, [5, 6, 7], 3, 1.0, substream(11, "r"))
        t2 = rollout(model, [5, 6, 7], 3, 1.0, substream(11, "r"))
        assert [s.action for s in t1.steps] == [s.action for s in t2.steps]
        assert [s.log_prob for s in t1.steps] == [s.log_prob for s in t2.steps]

    def test_log_prob_consistency_on_rescore(self, model):
        tr = rollout(model, [5, 6, 7], 3, 0.9, substream(13, "r"))
        rescored = rescore_trace(model, tr, 0.9)
        for step, lp in zip(tr.steps, rescored):
            assert abs(step.log_prob - lp) < 1e-5

    def test_validity_through_phases(self, model):
        tr = rollout(model, [5, 6, 7, 8], 3, 1.0, substream(21, "r"))
        for step in tr.steps:
            if step.action.kind == "insert":
                assert step.after.n_placeholders == sum(step.action.insert_counts)
            else:
                assert PLH not in step.after.tokens
            assert len(step.after) <= TINY.max_seq_len


class TestTraceDump:
    def test_round_trip(self, model, tmp_path):
        traces = [rollout(model, [5, 6, 7], 2, 1.0, substream(i, "r"),
                          record_step_bleu=True, reference=[5, 6, 7])
                  for i in range(3)]
        path = tmp_path / "traces.jsonl"
        dump_traces(path, traces, references=[[5, 6, 7]] * 3)
        records = load_trace_records(path)
        assert len(records) == 3
        for tr, rec in zip(traces, records):
            assert rec["source"] == [5, 6, 7]
            assert rec["final"] == list(tr.final_hypothesis.tokens)
            assert len(rec["steps"]) == len(tr.steps)
            assert all(s["log_prob"] <= 0 for s in rec["steps"])
        with open(path) as fh:
            for line in fh:
                json.loads(line)


class TestEditActionInvariants:
    def test_exactly_one_payload(self):
        with pytest.raises(ShapeError):
            EditAction("delete")
        with pytest.raises(ShapeError):
            EditAction("delete", delete_mask=(0,), insert_counts=(1,))

    def test_hypothesis_sentinels_enforced(self):
        with pytest.raises(StateError):
            Hypothesis((5, 6))
        with pytest.raises(StateError):
            Hypothesis((BOS, 5))
