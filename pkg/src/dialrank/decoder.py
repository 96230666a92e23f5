"""Response decoders: teacher-forced training loss and greedy generation.

Three families: a plain LSTM conditioned through its initial state, an LSTM
with Luong-style attention over the encoder memory, and a causal transformer
with cross-attention. Attention targets are per-word encoder states for
sequential encoders and utterance representations for hierarchical ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS, EOS
from .encoder import EncoderOutput
from .errors import ConfigError
from .layers import (
    create_lstm_params,
    create_transformer_decoder_params,
    linear,
    lstm_step_stack,
    transformer_decoder,
    zero_lstm_state,
)
from .params import ParameterStore
from .tensor import (
    Tensor,
    add,
    concat,
    embedding,
    getitem,
    log_softmax,
    matmul,
    softmax,
    stack,
    tanh,
    tmean,
    tsum,
)

DECODER_KINDS = ("lstm", "lstm_attn", "transformer")


@dataclass
class DecoderConfig:
    kind: str = "lstm"
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: int | None = None
    max_decode_len: int = 32
    max_positions: int = 64

    def __post_init__(self):
        if self.kind not in DECODER_KINDS:
            raise ConfigError(f"unknown decoder kind {self.kind!r}")
        if self.kind == "transformer" and self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim


@dataclass
class GenerationOutput:
    token_ids: list[int]
    logprobs: list[float]
    stopped_by: str  # "eos" | "max_len"


def create_decoder_params(
    store: ParameterStore,
    cfg: DecoderConfig,
    embed_dim: int,
    memory_dim: int,
    vocab_size: int,
    use_bridge: bool,
    rng,
) -> None:
    if cfg.kind == "transformer":
        if embed_dim != cfg.hidden_dim:
            store.create("dec.in_proj.w", (embed_dim, cfg.hidden_dim), rng, "matrix")
            store.create("dec.in_proj.b", (cfg.hidden_dim,), rng, "bias")
        store.create("dec.pos", (cfg.max_positions, cfg.hidden_dim), rng, "embedding")
        create_transformer_decoder_params(
            store, "dec", cfg.hidden_dim, memory_dim, cfg.num_layers, cfg.num_heads, cfg.ffn_dim, rng
        )
    else:
        create_lstm_params(store, "dec", embed_dim, cfg.hidden_dim, cfg.num_layers, rng)
        if use_bridge:
            for layer in range(cfg.num_layers):
                store.create(f"dec.bridge.l{layer}.w", (memory_dim, cfg.hidden_dim), rng, "matrix")
                store.create(f"dec.bridge.l{layer}.b", (cfg.hidden_dim,), rng, "bias")
        if cfg.kind == "lstm_attn":
            store.create("dec.attn.wa", (memory_dim, cfg.hidden_dim), rng, "matrix")
            store.create("dec.attn.wc", (cfg.hidden_dim + memory_dim, cfg.hidden_dim), rng, "matrix")
            store.create("dec.attn.bc", (cfg.hidden_dim,), rng, "bias")
    store.create("dec.out.w", (cfg.hidden_dim, vocab_size), rng, "matrix")
    store.create("dec.out.b", (vocab_size,), rng, "bias")


def _initial_state(store: ParameterStore, cfg: DecoderConfig, enc_out: EncoderOutput):
    """Encoder state carries over directly when shapes line up; otherwise a
    learned bridge maps the mean encoder memory into each layer's h0."""
    final = enc_out.final_state
    if (
        final is not None
        and len(final) == cfg.num_layers
        and final[0][0].shape[-1] == cfg.hidden_dim
        and "dec.bridge.l0.w" not in store
    ):
        return [(h, c) for h, c in final]
    context = tmean(enc_out.attention_memory, axis=0)
    state = []
    zeros = zero_lstm_state(cfg.num_layers, cfg.hidden_dim)
    for layer in range(cfg.num_layers):
        h0 = tanh(linear(context, store[f"dec.bridge.l{layer}.w"], store[f"dec.bridge.l{layer}.b"]))
        state.append((h0, zeros[layer][1]))
    return state


def _lstm_step(store, cfg, x, state, proj_memory, memory):
    h, new_state = lstm_step_stack(store, "dec", x, state)
    if cfg.kind == "lstm_attn":
        scores = matmul(proj_memory, h)
        weights = softmax(scores)
        context = matmul(weights, memory)
        h = tanh(linear(concat([h, context]), store["dec.attn.wc"], store["dec.attn.bc"]))
    return h, new_state


def _transformer_features(store, cfg, enc_out, embed_table, input_ids) -> Tensor:
    if len(input_ids) > cfg.max_positions:
        raise ConfigError(
            f"decoder input of {len(input_ids)} tokens exceeds position capacity {cfg.max_positions}"
        )
    x = embedding(embed_table, input_ids)
    if "dec.in_proj.w" in store:
        x = linear(x, store["dec.in_proj.w"], store["dec.in_proj.b"])
    pos = getitem(store["dec.pos"], slice(0, len(input_ids)))
    return transformer_decoder(
        store, "dec", add(x, pos), enc_out.attention_memory, cfg.num_layers, cfg.num_heads
    )


def teacher_forced_logits(
    store: ParameterStore,
    cfg: DecoderConfig,
    enc_out: EncoderOutput,
    embed_table: Tensor,
    input_ids: list[int],
) -> Tensor:
    """Logits for each position of a gold-prefixed input, shape (L, vocab)."""
    if cfg.kind == "transformer":
        features = _transformer_features(store, cfg, enc_out, embed_table, input_ids)
    else:
        state = _initial_state(store, cfg, enc_out)
        memory = enc_out.attention_memory
        proj_memory = matmul(memory, store["dec.attn.wa"]) if cfg.kind == "lstm_attn" else None
        embedded = embedding(embed_table, input_ids)
        feats = []
        for t in range(len(input_ids)):
            h, state = _lstm_step(store, cfg, getitem(embedded, t), state, proj_memory, memory)
            feats.append(h)
        features = stack(feats)
    return linear(features, store["dec.out.w"], store["dec.out.b"])


def nll_from_logits(logits: Tensor, targets) -> tuple[Tensor, np.ndarray]:
    """Summed negative log-likelihood of target ids under per-step logits.

    Returns the scalar loss and the per-step gold log-probabilities.
    """
    targets = np.asarray(targets, dtype=np.intp)
    logprobs = log_softmax(logits, axis=-1)
    picked = getitem(logprobs, (np.arange(len(targets)), targets))
    return -tsum(picked), picked.data.copy()


def generation_loss(
    store: ParameterStore,
    cfg: DecoderConfig,
    enc_out: EncoderOutput,
    embed_table: Tensor,
    response_ids: list[int],
) -> tuple[Tensor, np.ndarray]:
    """Teacher-forced negative log-likelihood, summed over response + EOS.

    Returns the scalar loss and the per-token gold log-probabilities.
    """
    if len(response_ids) == 0:
        raise ConfigError("cannot compute a generation loss for an empty response")
    input_ids = [BOS] + list(response_ids)
    targets = list(response_ids) + [EOS]
    logits = teacher_forced_logits(store, cfg, enc_out, embed_table, input_ids)
    return nll_from_logits(logits, targets)


class _LstmSession:
    def __init__(self, store, cfg, enc_out, embed_table):
        self.store, self.cfg, self.enc_out, self.embed = store, cfg, enc_out, embed_table
        self.state = _initial_state(store, cfg, enc_out)
        self.memory = enc_out.attention_memory
        self.proj_memory = (
            matmul(self.memory, store["dec.attn.wa"]) if cfg.kind == "lstm_attn" else None
        )

    def step(self, token_id: int) -> np.ndarray:
        x = embedding(self.embed, [token_id])
        h, self.state = _lstm_step(
            self.store, self.cfg, getitem(x, 0), self.state, self.proj_memory, self.memory
        )
        return linear(h, self.store["dec.out.w"], self.store["dec.out.b"]).data


class _TransformerSession:
    def __init__(self, store, cfg, enc_out, embed_table):
        self.store, self.cfg, self.enc_out, self.embed = store, cfg, enc_out, embed_table
        self.prefix: list[int] = []

    def step(self, token_id: int) -> np.ndarray:
        self.prefix.append(token_id)
        features = _transformer_features(self.store, self.cfg, self.enc_out, self.embed, self.prefix)
        last = getitem(features, features.shape[0] - 1)
        return linear(last, self.store["dec.out.w"], self.store["dec.out.b"]).data


def decode_session(store: ParameterStore, cfg: DecoderConfig, enc_out: EncoderOutput, embed_table: Tensor):
    if cfg.kind == "transformer":
        return _TransformerSession(store, cfg, enc_out, embed_table)
    return _LstmSession(store, cfg, enc_out, embed_table)


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def greedy_decode(session, max_len: int, bos_id: int = BOS, eos_id: int = EOS) -> GenerationOutput:
    """Greedy argmax decoding; ties resolve to the lowest token id.

    Stops at EOS (not emitted) or after max_len tokens.
    """
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    token_ids: list[int] = []
    logprobs: list[float] = []
    prev = bos_id
    for _ in range(max_len):
        logits = session.step(prev)
        token = int(np.argmax(logits))
        if token == eos_id:
            return GenerationOutput(token_ids, logprobs, "eos")
        token_ids.append(token)
        logprobs.append(float(_log_softmax_np(logits)[token]))
        prev = token
    return GenerationOutput(token_ids, logprobs, "max_len")
