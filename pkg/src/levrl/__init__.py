"""levrl: an edit-based non-autoregressive sequence generation workbench.

A small Levenshtein-style edit policy (delete / insert-placeholder /
replace-token) trained first with supervised dual-policy learning and then
fine-tuned with REINFORCE under stepwise or episodic reward regimes with
temperature-controlled sampling.
"""

from .bleu import BleuStats, corpus_bleu, sentence_bleu
from .editing import (EditAction, EditTrace, Hypothesis, apply_delete,
                      apply_insert, apply_replace, greedy_decode, rollout,
                      sample_edit)
from .model import EditPolicyModel, ModelConfig, PolicyOutput
from .oracle import Alignment, corrupt, expert_actions, levenshtein_distance
from .rl import (AdvantageStats, RewardedSampleSet, RLConfig,
                 TemperatureSchedule, advantages, episodic_update,
                 loo_baseline, rl_finetune, stepwise_update, temperature_at)
from .supervised import SupervisedConfig, pretrain, supervised_step
from .tensor import Parameter, Tensor, no_grad, sgd_step, softmax_tempered

__all__ = [
    "AdvantageStats", "Alignment", "BleuStats", "EditAction", "EditPolicyModel",
    "EditTrace", "Hypothesis", "ModelConfig", "Parameter", "PolicyOutput",
    "RLConfig", "RewardedSampleSet", "SupervisedConfig", "TemperatureSchedule",
    "Tensor",
    "advantages", "apply_delete", "apply_insert", "apply_replace",
    "corpus_bleu", "corrupt", "episodic_update", "expert_actions",
    "greedy_decode", "levenshtein_distance", "loo_baseline", "no_grad",
    "pretrain", "rl_finetune", "rollout", "sample_edit", "sentence_bleu",
    "sgd_step", "softmax_tempered", "stepwise_update", "supervised_step",
    "temperature_at",
]

__version__ = "0.1.0"
