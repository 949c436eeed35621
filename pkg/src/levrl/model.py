"""The edit-policy network.

A small transformer encoder reads the source; a decoder attends
bidirectionally over the current hypothesis with cross-attention to the
encoder memory.  Three classification heads share the decoder trunk:

* delete      — keep/delete per non-sentinel hypothesis token
* insert      — 0..max_placeholders placeholders per adjacent token pair
* replace     — a vocabulary distribution per placeholder position

The batched entry points operate on padded id matrices and are what the
trainers use; the single-sequence methods (``encode``, ``forward_delete``,
``forward_insert``, ``forward_replace``) wrap them for one hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, LengthError, ShapeError, StateError, VocabularyError
from .tensor import Parameter, Tensor
from .vocab import BOS, EOS, FIRST_CONTENT_ID, PAD, PLH

NEG_INF = -1e9


@dataclass
class ModelConfig:
    vocab_size: int = 64
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 128
    max_placeholders: int = 64
    max_seq_len: int = 64

    def validate(self) -> None:
        problems = []
        if self.d_model % self.n_heads != 0:
            problems.append("d_model must be divisible by n_heads")
        if self.max_placeholders < 1:
            problems.append("max_placeholders must be >= 1")
        if self.vocab_size <= FIRST_CONTENT_ID:
            problems.append(
                f"vocab_size must exceed {FIRST_CONTENT_ID} reserved ids")
        if self.max_seq_len < 2:
            problems.append("max_seq_len must allow at least BOS+EOS")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f.name for f in
                            cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class PolicyOutput:
    """Per-edit-operation score tensors for one hypothesis."""

    delete_logits: Tensor | None = None   # [n_deletable, 2]
    insert_logits: Tensor | None = None   # [n_gaps, max_placeholders + 1]
    token_logits: Tensor | None = None    # [n_placeholders, vocab_size]


@dataclass
class EncodedBatch:
    memory: Tensor          # [B, S, d_model]
    src_mask: np.ndarray    # [B, S] 1.0 at real tokens

    def detached(self) -> "EncodedBatch":
        return EncodedBatch(self.memory.detach(), self.src_mask)


def sinusoid_table(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    dim = np.arange(d_model // 2)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * dim / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Pad id sequences with PAD; returns (ids [B, L], lengths [B])."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    ids = np.full((len(seqs), max(1, int(lengths.max()))), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, lengths


class EditPolicyModel:
    """Encoder + bidirectional decoder with shared-trunk delete/insert/replace heads."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self._params: list[Parameter] = []
        self._names: set[str] = set()
        d, f = config.d_model, config.ffn_dim
        self.embed = self._param(rng.normal(0.0, d ** -0.5, (config.vocab_size, d)),
                                 "embed.tokens")
        self.pos = sinusoid_table(config.max_seq_len + 1, d)
        self.enc_layers = [self._make_layer(rng, f"enc.{i}", cross=False)
                           for i in range(config.n_encoder_layers)]
        self.enc_norm = self._norm_pair("enc.final")
        self.dec_layers = [self._make_layer(rng, f"dec.{i}", cross=True)
                           for i in range(config.n_decoder_layers)]
        self.dec_norm = self._norm_pair("dec.final")
        self.w_delete = self._param(self._xavier(rng, d, 2), "head.delete")
        self.w_insert = self._param(
            self._xavier(rng, 2 * d, config.max_placeholders + 1), "head.insert")
        # token head is tied to embed.tokens
        self._token_mask = np.zeros(config.vocab_size, dtype=np.float64)
        self._token_mask[[PAD, BOS, EOS, PLH]] = NEG_INF

    # -- parameter plumbing -------------------------------------------------

    @staticmethod
    def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, (fan_in, fan_out))

    def _param(self, data: np.ndarray, name: str) -> Parameter:
        if name in self._names:
            raise ConfigError(f"duplicate parameter name {name}")
        p = Parameter(np.asarray(data, dtype=T.default_dtype()), name)
        self._names.add(name)
        self._params.append(p)
        return p

    def _norm_pair(self, name: str) -> tuple[Parameter, Parameter]:
        d = self.config.d_model
        return (self._param(np.ones(d), f"{name}.ln_g"),
                self._param(np.zeros(d), f"{name}.ln_b"))

    def _make_layer(self, rng, name: str, cross: bool) -> dict:
        d, f = self.config.d_model, self.config.ffn_dim
        layer = {
            "ln1": self._norm_pair(f"{name}.ln1"),
            "wq": self._param(self._xavier(rng, d, d), f"{name}.attn.wq"),
            "wk": self._param(self._xavier(rng, d, d), f"{name}.attn.wk"),
            "wv": self._param(self._xavier(rng, d, d), f"{name}.attn.wv"),
            "wo": self._param(self._xavier(rng, d, d), f"{name}.attn.wo"),
        }
        if cross:
            layer["ln_x"] = self._norm_pair(f"{name}.lnx")
            layer["xq"] = self._param(self._xavier(rng, d, d), f"{name}.xattn.wq")
            layer["xk"] = self._param(self._xavier(rng, d, d), f"{name}.xattn.wk")
            layer["xv"] = self._param(self._xavier(rng, d, d), f"{name}.xattn.wv")
            layer["xo"] = self._param(self._xavier(rng, d, d), f"{name}.xattn.wo")
        layer["ln2"] = self._norm_pair(f"{name}.ln2")
        layer["w1"] = self._param(self._xavier(rng, d, f), f"{name}.ffn.w1")
        layer["b1"] = self._param(np.zeros(f), f"{name}.ffn.b1")
        layer["w2"] = self._param(self._xavier(rng, f, d), f"{name}.ffn.w2")
        layer["b2"] = self._param(np.zeros(d), f"{name}.ffn.b2")
        return layer

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params)

    def zero_grads(self) -> None:
        for p in self._params:
            p.grad = None

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        by_name = {p.name: p for p in self._params}
        if set(arrays) != set(by_name):
            raise ConfigError("checkpoint parameter names do not match model")
        for name, arr in arrays.items():
            p = by_name[name]
            if p.data.shape != arr.shape:
                raise ConfigError(f"shape mismatch for {name}")
            p.data = arr.astype(T.default_dtype()).copy()
            p.grad = None

    # -- transformer internals ---------------------------------------------

    def _attend(self, q_in: Tensor, kv_in: Tensor, mask_bias: np.ndarray,
                wq, wk, wv, wo) -> Tensor:
        cfg = self.config
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        bq, lq = q_in.shape[0], q_in.shape[1]
        lk = kv_in.shape[1]

        def split(x: Tensor, l: int) -> Tensor:
            return T.transpose(T.reshape(x, (bq, l, h, dh)), (0, 2, 1, 3))

        q = split(T.matmul(q_in, wq), lq)
        k = split(T.matmul(kv_in, wk), lk)
        v = split(T.matmul(kv_in, wv), lk)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), dh ** -0.5)
        scores = T.add(scores, mask_bias)  # [B, h, Lq, Lk] + [B, 1, 1, Lk]
        attn = T.softmax_tempered(scores, 1.0)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (bq, lq, cfg.d_model))
        return T.matmul(out, wo)

    def _ffn(self, x: Tensor, layer: dict) -> Tensor:
        hid = T.relu(T.add(T.matmul(x, layer["w1"]), layer["b1"]))
        return T.add(T.matmul(hid, layer["w2"]), layer["b2"])

    def _embed_positions(self, ids: np.ndarray) -> Tensor:
        scale = math.sqrt(self.config.d_model)
        emb = T.mul(T.embedding(self.embed, ids), scale)
        pos = self.pos[: ids.shape[1]].astype(T.default_dtype())
        return T.add(emb, pos[None, :, :])

    @staticmethod
    def _mask_bias(mask: np.ndarray, dtype) -> np.ndarray:
        # [B, L] {0,1} -> additive [B, 1, 1, L]
        return (NEG_INF * (1.0 - mask))[:, None, None, :].astype(dtype)

    def _run_stack(self, x: Tensor, layers, self_bias, final_norm,
                   memory: Tensor | None = None, mem_bias=None) -> Tensor:
        for layer in layers:
            g, b = layer["ln1"]
            normed = T.layer_norm(x, g, b)
            x = T.add(x, self._attend(normed, normed, self_bias,
                                      layer["wq"], layer["wk"],
                                      layer["wv"], layer["wo"]))
            if memory is not None:
                g, b = layer["ln_x"]
                x = T.add(x, self._attend(T.layer_norm(x, g, b), memory, mem_bias,
                                          layer["xq"], layer["xk"],
                                          layer["xv"], layer["xo"]))
            g, b = layer["ln2"]
            x = T.add(x, self._ffn(T.layer_norm(x, g, b), layer))
        g, b = final_norm
        return T.layer_norm(x, g, b)

    # -- batched forward passes -----------------------------------------------

    def encode_batch(self, sources: Sequence[Sequence[int]]) -> EncodedBatch:
        for s in sources:
            self._validate_source(s)
        ids, lengths = pad_batch(sources)
        mask = (np.arange(ids.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
        x = self._embed_positions(ids)
        bias = self._mask_bias(mask, x.data.dtype)
        mem = self._run_stack(x, self.enc_layers, bias, self.enc_norm)
        return EncodedBatch(mem, mask)

    def decode_trunk(self, tokens: np.ndarray, enc: EncodedBatch) -> Tensor:
        """Decoder states [B, L, d_model] over padded hypothesis ids."""
        if tokens.shape[0] != enc.memory.shape[0]:
            raise ShapeError("hypothesis batch does not match encoder batch")
        hyp_mask = (tokens != PAD).astype(np.float64)
        x = self._embed_positions(tokens)
        self_bias = self._mask_bias(hyp_mask, x.data.dtype)
        mem_bias = self._mask_bias(enc.src_mask, x.data.dtype)
        return self._run_stack(x, self.dec_layers, self_bias, self.dec_norm,
                               memory=enc.memory, mem_bias=mem_bias)

    def delete_logits_batch(self, trunk: Tensor) -> Tensor:
        return T.matmul(trunk, self.w_delete)              # [B, L, 2]

    def insert_logits_batch(self, trunk: Tensor) -> Tensor:
        pairs = T.concat([trunk[:, :-1, :], trunk[:, 1:, :]], axis=-1)
        return T.matmul(pairs, self.w_insert)              # [B, L-1, K+1]

    def token_logits_batch(self, trunk: Tensor) -> Tensor:
        logits = T.matmul(trunk, T.transpose(self.embed, (1, 0)))
        bias = self._token_mask.astype(logits.data.dtype)
        return T.add(logits, bias[None, None, :])          # [B, L, V]

    # -- single-sequence surface ------------------------------------------------

    def _validate_source(self, source: Sequence[int]) -> None:
        if len(source) < 1:
            raise LengthError("source must contain at least one token")
        if len(source) > self.config.max_seq_len:
            raise LengthError(
                f"source length {len(source)} exceeds max_seq_len {self.config.max_seq_len}")
        for t in source:
            if not 0 <= t < self.config.vocab_size:
                raise VocabularyError(f"token id {t} outside vocabulary")
            if t == PAD:
                raise VocabularyError("PAD is not a valid source token")

    def encode(self, source: Sequence[int]) -> Tensor:
        """Memory [len(source), d_model] for one source sequence."""
        enc = self.encode_batch([list(source)])
        return T.reshape(enc.memory, enc.memory.shape[1:])

    def _single_enc(self, memory: Tensor) -> EncodedBatch:
        mem = T.reshape(memory, (1,) + tuple(memory.shape))
        return EncodedBatch(mem, np.ones((1, memory.shape[0])))

    def _single_trunk(self, hyp_tokens: Sequence[int], memory: Tensor) -> Tensor:
        ids = np.asarray(hyp_tokens, dtype=np.int64)[None, :]
        return self.decode_trunk(ids, self._single_enc(memory))

    def forward_delete(self, hyp, memory: Tensor) -> Tensor:
        """Keep/delete logits [n_deletable, 2]; sentinels carry no logits."""
        tokens = _hyp_tokens(hyp)
        if PLH in tokens:
            raise StateError("deletion operates on realized tokens, found PLH")
        trunk = self._single_trunk(tokens, memory)
        logits = self.delete_logits_batch(trunk)
        return logits[0, 1:-1, :]

    def forward_insert(self, hyp, memory: Tensor) -> Tensor:
        """Placeholder-count logits [n_gaps, max_placeholders + 1]."""
        tokens = _hyp_tokens(hyp)
        if PLH in tokens:
            raise StateError("insertion requires a placeholder-free hypothesis")
        trunk = self._single_trunk(tokens, memory)
        return self.insert_logits_batch(trunk)[0]

    def forward_replace(self, hyp, memory: Tensor) -> Tensor:
        """Vocabulary logits [n_placeholders, vocab_size] at PLH positions."""
        tokens = _hyp_tokens(hyp)
        plh_idx = [i for i, t in enumerate(tokens) if t == PLH]
        if not plh_idx:
            return Tensor(np.zeros((0, self.config.vocab_size)))
        trunk = self._single_trunk(tokens, memory)
        logits = self.token_logits_batch(trunk)
        return T.take(logits[0], plh_idx, axis=0)

    def policy(self, hyp, memory: Tensor, phase: str) -> PolicyOutput:
        if phase == "delete":
            return PolicyOutput(delete_logits=self.forward_delete(hyp, memory))
        if phase == "insert":
            return PolicyOutput(insert_logits=self.forward_insert(hyp, memory))
        if phase == "replace":
            return PolicyOutput(token_logits=self.forward_replace(hyp, memory))
        raise ValueError(f"unknown phase {phase!r}")


def _hyp_tokens(hyp) -> tuple[int, ...]:
    tokens = tuple(hyp.tokens) if hasattr(hyp, "tokens") else tuple(hyp)
    if len(tokens) < 2 or tokens[0] != BOS or tokens[-1] != EOS:
        raise StateError("hypothesis must be BOS ... EOS")
    return tokens


# -- checkpointing ------------------------------------------------------------------


def save_model(path, model: EditPolicyModel, extra: dict | None = None) -> None:
    meta = {"model_config": model.config.to_dict()}
    if extra:
        meta.update(extra)
    T.save_params(path, model.parameters(), meta)


def load_model(path, expect_config: ModelConfig | None = None
               ) -> tuple[EditPolicyModel, dict]:
    arrays, meta = T.load_params(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    if expect_config is not None and expect_config.to_dict() != cfg.to_dict():
        raise ConfigError("checkpoint model config does not match expected config")
    model = EditPolicyModel(cfg, np.random.default_rng(0))
    model.load_state(arrays)
    return model, meta
