"""History encoders producing the utterance representation matrix U.

Sequential kinds concatenate the history into one token stream (optionally
separated by EOS), encode it, and average each utterance's own word states
into its row of U. Hierarchical kinds encode each utterance with a word-level
LSTM and run an utterance-level LSTM or transformer over those encodings.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import EOS
from .errors import ConfigError
from .layers import (
    create_lstm_params,
    create_transformer_encoder_params,
    linear,
    lstm_stack,
    transformer_encoder,
)
from .params import ParameterStore
from .tensor import Tensor, add, embedding, getitem, stack, tmean

SEQUENTIAL_KINDS = ("seq_lstm", "seq_lstm_attn", "seq_transformer")
HIERARCHICAL_KINDS = ("hier_lstm", "hier_transformer")
ENCODER_KINDS = SEQUENTIAL_KINDS + HIERARCHICAL_KINDS


@dataclass
class EncoderConfig:
    kind: str = "seq_lstm"
    embed_dim: int = 128
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: int | None = None
    max_positions: int = 512
    use_sep: bool = True

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.is_transformer and self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim

    @property
    def is_transformer(self) -> bool:
        return self.kind in ("seq_transformer", "hier_transformer")

    @property
    def is_sequential(self) -> bool:
        return self.kind in SEQUENTIAL_KINDS


@dataclass
class EncoderOutput:
    utterance_reprs: Tensor                 # (M, hidden_dim), row j is u_{j+1}
    word_states: list[Tensor]               # per-utterance (K_j, hidden_dim)
    attention_memory: Tensor                # what attention decoders attend over
    kind: str
    final_state: list[tuple[Tensor, Tensor]] | None = None
    dropped_utterances: int = 0

    @property
    def history_len(self) -> int:
        return self.utterance_reprs.shape[0]


def create_encoder_params(store: ParameterStore, cfg: EncoderConfig, rng) -> None:
    if cfg.kind in ("seq_lstm", "seq_lstm_attn"):
        create_lstm_params(store, "enc", cfg.embed_dim, cfg.hidden_dim, cfg.num_layers, rng)
    elif cfg.kind == "seq_transformer":
        if cfg.embed_dim != cfg.hidden_dim:
            store.create("enc.in_proj.w", (cfg.embed_dim, cfg.hidden_dim), rng, "matrix")
            store.create("enc.in_proj.b", (cfg.hidden_dim,), rng, "bias")
        store.create("enc.pos", (cfg.max_positions, cfg.hidden_dim), rng, "embedding")
        create_transformer_encoder_params(
            store, "enc", cfg.hidden_dim, cfg.num_layers, cfg.num_heads, cfg.ffn_dim, rng
        )
    elif cfg.kind == "hier_lstm":
        create_lstm_params(store, "enc.word", cfg.embed_dim, cfg.hidden_dim, cfg.num_layers, rng)
        create_lstm_params(store, "enc.inter", cfg.hidden_dim, cfg.hidden_dim, cfg.num_layers, rng)
    else:  # hier_transformer
        create_lstm_params(store, "enc.word", cfg.embed_dim, cfg.hidden_dim, cfg.num_layers, rng)
        store.create("enc.pos", (cfg.max_positions, cfg.hidden_dim), rng, "embedding")
        create_transformer_encoder_params(
            store, "enc", cfg.hidden_dim, cfg.num_layers, cfg.num_heads, cfg.ffn_dim, rng
        )


def _fit_to_positions(history: list[list[int]], cfg: EncoderConfig) -> tuple[list[list[int]], int]:
    """Drop oldest utterances until the encoded sequence fits the position table."""
    if not cfg.is_transformer:
        return history, 0
    if cfg.kind == "hier_transformer":
        dropped = max(0, len(history) - cfg.max_positions)
        return history[dropped:], dropped

    def total_len(h):
        seps = len(h) - 1 if cfg.use_sep else 0
        return sum(len(u) for u in h) + seps

    dropped = 0
    while len(history) > 1 and total_len(history) > cfg.max_positions:
        history = history[1:]
        dropped += 1
    if total_len(history) > cfg.max_positions:  # a single oversized utterance
        history = [history[0][-cfg.max_positions:]]
    return history, dropped


def encode_sequential(
    store: ParameterStore,
    cfg: EncoderConfig,
    embed_table: Tensor,
    history: list[list[int]],
) -> EncoderOutput:
    if not cfg.is_sequential:
        raise ConfigError(f"encode_sequential got hierarchical kind {cfg.kind!r}")
    if len(history) == 0:
        raise ConfigError("cannot encode an empty history")
    history, dropped = _fit_to_positions(history, cfg)

    tokens: list[int] = []
    spans: list[tuple[int, int]] = []
    for j, utt in enumerate(history):
        if cfg.use_sep and j > 0:
            tokens.append(EOS)
        start = len(tokens)
        tokens.extend(utt)
        spans.append((start, len(tokens)))

    embedded = embedding(embed_table, tokens)
    final_state = None
    if cfg.kind == "seq_transformer":
        x = embedded
        if "enc.in_proj.w" in store:
            x = linear(x, store["enc.in_proj.w"], store["enc.in_proj.b"])
        pos = getitem(store["enc.pos"], slice(0, len(tokens)))
        states = transformer_encoder(store, "enc", add(x, pos), cfg.num_layers, cfg.num_heads)
    else:
        rows = [getitem(embedded, t) for t in range(len(tokens))]
        outs, finals = lstm_stack(store, "enc", rows, cfg.num_layers)
        states = stack(outs)
        final_state = finals

    word_states = [getitem(states, slice(lo, hi)) for lo, hi in spans]
    reprs = stack([tmean(w, axis=0) for w in word_states])
    return EncoderOutput(
        utterance_reprs=reprs,
        word_states=word_states,
        attention_memory=states,
        kind=cfg.kind,
        final_state=final_state,
        dropped_utterances=dropped,
    )


def encode_hierarchical(
    store: ParameterStore,
    cfg: EncoderConfig,
    embed_table: Tensor,
    history: list[list[int]],
) -> EncoderOutput:
    if cfg.is_sequential:
        raise ConfigError(f"encode_hierarchical got sequential kind {cfg.kind!r}")
    if len(history) == 0:
        raise ConfigError("cannot encode an empty history")
    history, dropped = _fit_to_positions(history, cfg)

    word_states = []
    utt_encodings = []
    for utt in history:
        embedded = embedding(embed_table, utt)
        rows = [getitem(embedded, t) for t in range(len(utt))]
        outs, finals = lstm_stack(store, "enc.word", rows, cfg.num_layers)
        word_states.append(stack(outs))
        utt_encodings.append(finals[-1][0])  # top-layer final h

    final_state = None
    if cfg.kind == "hier_lstm":
        outs, finals = lstm_stack(store, "enc.inter", utt_encodings, cfg.num_layers)
        reprs = stack(outs)
        final_state = finals
    else:
        x = stack(utt_encodings)
        pos = getitem(store["enc.pos"], slice(0, len(history)))
        reprs = transformer_encoder(store, "enc", add(x, pos), cfg.num_layers, cfg.num_heads)

    return EncoderOutput(
        utterance_reprs=reprs,
        word_states=word_states,
        attention_memory=reprs,
        kind=cfg.kind,
        final_state=final_state,
        dropped_utterances=dropped,
    )


def encode(store: ParameterStore, cfg: EncoderConfig, embed_table: Tensor, history: list[list[int]]) -> EncoderOutput:
    if cfg.is_sequential:
        return encode_sequential(store, cfg, embed_table, history)
    return encode_hierarchical(store, cfg, embed_table, history)
