"""Full dialogue models: shared embeddings, an encoder, a decoder, and the
ranking head, with a registry of the five standard architecture pairings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ranking
from .checkpoint import load_checkpoint, restore_params, save_checkpoint
from .corpus import BOS, RESERVED, HistoryResponsePair, Utterance, Vocab
from .decoder import (
    DecoderConfig,
    GenerationOutput,
    create_decoder_params,
    decode_session,
    generation_loss,
    greedy_decode,
    teacher_forced_logits,
)
from .encoder import EncoderConfig, EncoderOutput, create_encoder_params, encode
from .errors import ConfigError
from .params import ParameterStore, rng_stream
from .ranking import RankConfig, create_ranking_params, rank_loss
from .tensor import Tensor

# The five architecture pairings evaluated throughout: named presets mapping
# to (encoder kind, decoder kind). Any other compatible pairing can still be
# configured explicitly.
REGISTRY: dict[str, tuple[str, str]] = {
    "seq2seq": ("seq_lstm", "lstm"),
    "seq2seq_attn": ("seq_lstm_attn", "lstm_attn"),
    "transformer": ("seq_transformer", "transformer"),
    "hred": ("hier_lstm", "lstm"),
    "recosa": ("hier_transformer", "transformer"),
}

_PRESET_DIMS = {
    "seq2seq": dict(embed_dim=128, hidden_dim=128),
    "seq2seq_attn": dict(embed_dim=128, hidden_dim=128),
    "transformer": dict(embed_dim=300, hidden_dim=300),
    "hred": dict(embed_dim=128, hidden_dim=128),
    "recosa": dict(embed_dim=300, hidden_dim=300),
}


@dataclass
class ModelConfig:
    vocab_size: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    rank: RankConfig = field(default_factory=RankConfig)

    def __post_init__(self):
        if self.vocab_size <= len(RESERVED):
            raise ConfigError(f"vocab_size must exceed the {len(RESERVED)} reserved ids")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "encoder": asdict(self.encoder),
            "decoder": asdict(self.decoder),
            "rank": asdict(self.rank),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(
            vocab_size=doc["vocab_size"],
            encoder=EncoderConfig(**doc["encoder"]),
            decoder=DecoderConfig(**doc["decoder"]),
            rank=RankConfig(**doc["rank"]),
        )


def preset_config(
    name: str,
    vocab_size: int,
    embed_dim: int | None = None,
    hidden_dim: int | None = None,
    num_layers: int = 2,
    num_heads: int = 2,
    rank: RankConfig | None = None,
    **kwargs,
) -> ModelConfig:
    """A ModelConfig for one of the registry pairings; dims are overridable."""
    if name not in REGISTRY:
        raise ConfigError(f"unknown model preset {name!r}; known: {sorted(REGISTRY)}")
    enc_kind, dec_kind = REGISTRY[name]
    dims = _PRESET_DIMS[name]
    embed = embed_dim if embed_dim is not None else dims["embed_dim"]
    hidden = hidden_dim if hidden_dim is not None else dims["hidden_dim"]
    enc_keys = {"ffn_dim", "max_positions", "use_sep"}
    dec_keys = {"dec_ffn_dim", "dec_max_decode_len", "dec_max_positions"}
    enc_extra = {k: v for k, v in kwargs.items() if k in enc_keys}
    dec_extra = {k.removeprefix("dec_"): v for k, v in kwargs.items() if k in dec_keys}
    unknown = set(kwargs) - enc_keys - dec_keys
    if unknown:
        raise ConfigError(f"unknown preset options {sorted(unknown)}")
    return ModelConfig(
        vocab_size=vocab_size,
        encoder=EncoderConfig(
            kind=enc_kind, embed_dim=embed, hidden_dim=hidden,
            num_layers=num_layers, num_heads=num_heads, **enc_extra,
        ),
        decoder=DecoderConfig(
            kind=dec_kind, hidden_dim=hidden, num_layers=num_layers,
            num_heads=num_heads, **dec_extra,
        ),
        rank=rank if rank is not None else RankConfig(),
    )


def _needs_bridge(enc: EncoderConfig, dec: DecoderConfig) -> bool:
    if dec.kind == "transformer":
        return False
    lstm_final = enc.kind in ("seq_lstm", "seq_lstm_attn", "hier_lstm")
    return not (lstm_final and enc.hidden_dim == dec.hidden_dim and enc.num_layers == dec.num_layers)


@dataclass
class PairForward:
    gen_loss: Tensor
    rank_loss: Tensor
    gold_logprobs: np.ndarray
    n_tokens: int
    n_instances: int


class DialogueModel:
    """One trainable dialogue generator with a ranking head.

    Ranking parameters are always created, even with the ranking mode off,
    so that a baseline and its rank-enhanced twin start from bit-identical
    encoder/decoder weights under the same seed; unused heads simply receive
    zero gradient.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params = ParameterStore()
        rng = rng_stream(seed, "init")
        self.params.create("embed", (config.vocab_size, config.encoder.embed_dim), rng, "embedding")
        create_encoder_params(self.params, config.encoder, rng)
        create_decoder_params(
            self.params,
            config.decoder,
            embed_dim=config.encoder.embed_dim,
            memory_dim=config.encoder.hidden_dim,
            vocab_size=config.vocab_size,
            use_bridge=_needs_bridge(config.encoder, config.decoder),
            rng=rng,
        )
        create_ranking_params(self.params, config.rank, config.encoder.hidden_dim, rng)

    # -- forward pieces ----------------------------------------------------

    @property
    def embed_table(self) -> Tensor:
        return self.params["embed"]

    def encode(self, history: list[list[int]]) -> EncoderOutput:
        return encode(self.params, self.config.encoder, self.embed_table, history)

    def pair_forward(self, pair: HistoryResponsePair) -> PairForward:
        history = [list(u.tokens) for u in pair.history]
        enc_out = self.encode(history)
        gen, gold_logprobs = generation_loss(
            self.params, self.config.decoder, enc_out, self.embed_table, list(pair.response.tokens)
        )
        rcfg = self.config.rank
        rloss = rank_loss(self.params, rcfg, enc_out.utterance_reprs)
        n_inst = len(ranking.build_instances(self.params, rcfg, enc_out.utterance_reprs)) if rcfg.mode != "off" else 0
        return PairForward(
            gen_loss=gen,
            rank_loss=rloss,
            gold_logprobs=gold_logprobs,
            n_tokens=len(gold_logprobs),
            n_instances=n_inst,
        )

    def response_logprobs(self, pair: HistoryResponsePair) -> np.ndarray:
        """Per-token gold log-probabilities (response tokens then EOS)."""
        history = [list(u.tokens) for u in pair.history]
        enc_out = self.encode(history)
        _, gold = generation_loss(
            self.params, self.config.decoder, enc_out, self.embed_table, list(pair.response.tokens)
        )
        return gold

    def generate(self, history: list[list[int]], max_len: int | None = None) -> GenerationOutput:
        enc_out = self.encode(history)
        session = decode_session(self.params, self.config.decoder, enc_out, self.embed_table)
        limit = max_len if max_len is not None else self.config.decoder.max_decode_len
        return greedy_decode(session, limit)

    def ranking_instances(self, history: list[list[int]]):
        enc_out = self.encode(history)
        return ranking.build_instances(self.params, self.config.rank, enc_out.utterance_reprs)

    def logits_for(self, pair: HistoryResponsePair) -> Tensor:
        """Teacher-forced decoder logits for a pair (diagnostics/tests)."""
        history = [list(u.tokens) for u in pair.history]
        enc_out = self.encode(history)
        input_ids = [BOS] + list(pair.response.tokens)
        return teacher_forced_logits(self.params, self.config.decoder, enc_out, self.embed_table, input_ids)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str, vocab: Vocab | None = None, extra: dict | None = None) -> None:
        tokens = vocab.id_to_token[len(RESERVED):] if vocab is not None else None
        save_checkpoint(path, self.params, self.config.to_dict(), tokens, extra)

    @classmethod
    def load(cls, path: str) -> tuple["DialogueModel", Vocab | None]:
        doc = load_checkpoint(path)
        if "model_config" not in doc:
            raise ConfigError(f"{path}: checkpoint has no model_config; cannot rebuild the model")
        model = cls(ModelConfig.from_dict(doc["model_config"]))
        restore_params(doc, model.params)
        vocab = Vocab(doc["vocab"]) if "vocab" in doc else None
        return model, vocab


def make_pair(history_tokens: list[list[int]], response_tokens: list[int]) -> HistoryResponsePair:
    """Ad-hoc pair construction for tests and probes."""
    return HistoryResponsePair(
        history=tuple(Utterance(tuple(t), "") for t in history_tokens),
        response=Utterance(tuple(response_tokens), ""),
        dialogue_id="adhoc",
        turn_index=len(history_tokens),
    )
