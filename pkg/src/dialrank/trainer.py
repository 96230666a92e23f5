"""Joint training: generation loss plus weighted ranking loss, Adam updates,
validation-driven early stopping, checkpointing, and JSONL run logs."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .corpus import HistoryResponsePair, Vocab
from .errors import ConfigError, NumericalError
from .metrics import perplexity
from .model import REGISTRY, DialogueModel, ModelConfig, preset_config
from .optim import adam_step, clip_global_norm
from .params import rng_stream
from .ranking import RankConfig
from .tensor import Tensor, set_default_dtype

# Recurrent families tolerate the larger step; transformers need the smaller.
_FAMILY_LR = {"lstm": 0.005, "lstm_attn": 0.005, "transformer": 0.001}


@dataclass
class TrainConfig:
    model: str = "seq2seq"
    encoder_kind: str | None = None  # override the preset's encoder
    decoder_kind: str | None = None  # override the preset's decoder
    vocab_size: int = 0  # filled from the vocabulary at train time if 0
    embed_dim: int | None = None
    hidden_dim: int | None = None
    num_layers: int = 2
    num_heads: int = 2
    use_sep: bool = True
    rank_mode: str = "off"
    rank_k: int = 2
    rank_alpha: float = 0.01
    rank_scorer: str = "mlp128"
    rank_query_dim: int = 64
    rank_scorer_hidden: int = 128
    lr: float | None = None
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    grad_clip: float = 5.0
    seed: int = 0
    dtype: str = "float64"
    max_utterance_len: int = 32
    max_response_len: int = 32
    max_decode_len: int = 32
    min_count: int = 1
    max_vocab: int | None = None
    train_corpus: str | None = None
    valid_corpus: str | None = None
    checkpoint: str | None = None
    run_log: str | None = None

    def __post_init__(self):
        if self.model not in REGISTRY:
            raise ConfigError(f"unknown model {self.model!r}; known: {sorted(REGISTRY)}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.rank_alpha < 0:
            raise ConfigError("rank.alpha must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def effective_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return _FAMILY_LR[REGISTRY[self.model][1]]

    def rank_config(self) -> RankConfig:
        return RankConfig(
            mode=self.rank_mode,
            k=self.rank_k,
            alpha=self.rank_alpha,
            scorer=self.rank_scorer,
            query_dim=self.rank_query_dim,
            scorer_hidden=self.rank_scorer_hidden,
        )

    def model_config(self, vocab_size: int) -> ModelConfig:
        cfg = preset_config(
            self.model,
            vocab_size,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            rank=self.rank_config(),
            use_sep=self.use_sep,
            dec_max_decode_len=self.max_decode_len,
            dec_max_positions=max(64, self.max_response_len + 2),
        )
        if self.encoder_kind is not None:
            cfg.encoder = replace(cfg.encoder, kind=self.encoder_kind)
        if self.decoder_kind is not None:
            cfg.decoder = replace(cfg.decoder, kind=self.decoder_kind)
        return cfg

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        fields = {}
        for key, value in doc.items():
            name = key.replace(".", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            fields[name] = value
        return cls(**fields)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LossBreakdown:
    gen: float
    rank: float
    total: float
    tokens: int
    instances: int


@dataclass
class TrainResult:
    model: DialogueModel
    log: list[dict] = field(default_factory=list)
    best_val: float = math.inf
    best_epoch: int = -1
    epochs_run: int = 0


def joint_loss(batch: list[HistoryResponsePair], model: DialogueModel, alpha: float) -> tuple[Tensor, LossBreakdown]:
    """Batch objective: mean per-pair summed generation loss plus alpha times
    the mean per-pair ranking loss."""
    if not batch:
        raise ConfigError("joint_loss over an empty batch")
    gen_total: Tensor | None = None
    rank_total: Tensor | None = None
    tokens = 0
    instances = 0
    for pair in batch:
        fwd = model.pair_forward(pair)
        gen_total = fwd.gen_loss if gen_total is None else gen_total + fwd.gen_loss
        rank_total = fwd.rank_loss if rank_total is None else rank_total + fwd.rank_loss
        tokens += fwd.n_tokens
        instances += fwd.n_instances
    inv = 1.0 / len(batch)
    gen_mean = gen_total * inv
    rank_mean = rank_total * inv
    # With alpha exactly 0 the rank term must not enter the graph at all:
    # even zero-valued gradients from it would reorder float accumulation in
    # shared buffers and break bit-identity with the rank-off baseline.
    total = gen_mean + alpha * rank_mean if alpha != 0.0 else gen_mean
    breakdown = LossBreakdown(
        gen=float(gen_mean.data),
        rank=float(rank_mean.data),
        total=float(total.data),
        tokens=tokens,
        instances=instances,
    )
    return total, breakdown


def _batches(pairs: list[HistoryResponsePair], batch_size: int, rng: np.random.Generator) -> list[list[HistoryResponsePair]]:
    """Length-bucketed batches in shuffled order.

    Sorting by history length keeps similarly-sized graphs together; the
    epoch-to-epoch randomness is in the batch order.
    """
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i].history), i))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    perm = rng.permutation(len(chunks))
    return [[pairs[i] for i in chunks[j]] for j in perm]


def train(
    config: TrainConfig,
    train_pairs: list[HistoryResponsePair],
    valid_pairs: list[HistoryResponsePair],
    vocab: Vocab | None = None,
    model: DialogueModel | None = None,
    metric_fn: Callable[[DialogueModel, list[HistoryResponsePair]], float] | None = None,
    log_stream=None,
) -> TrainResult:
    """Optimize until validation perplexity stops improving.

    ``metric_fn`` replaces the validation metric (tests use stubs); lower is
    better. The returned model carries the best-validation parameters.
    """
    if not train_pairs or not valid_pairs:
        raise ConfigError("train() needs non-empty train and validation splits")
    set_default_dtype(config.dtype)
    vocab_size = config.vocab_size or (len(vocab) if vocab is not None else 0)
    if model is None:
        if vocab_size <= 0:
            raise ConfigError("vocab_size not set and no vocabulary given")
        model = DialogueModel(config.model_config(vocab_size), seed=config.seed)
    metric = metric_fn if metric_fn is not None else perplexity
    shuffle_rng = rng_stream(config.seed, "shuffle")
    alpha = config.rank_alpha

    result = TrainResult(model=model)
    best_snapshot = None
    since_best = 0
    log_fh = open(config.run_log, "w", encoding="utf-8") if config.run_log else None
    try:
        for epoch in range(config.max_epochs):
            epoch_gen = epoch_rank = epoch_total = 0.0
            epoch_tokens = epoch_instances = 0
            n_pairs = 0
            for batch_idx, batch in enumerate(_batches(train_pairs, config.batch_size, shuffle_rng)):
                model.params.zero_grad()
                total, breakdown = joint_loss(batch, model, alpha)
                if not math.isfinite(breakdown.total):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch} batch {batch_idx}: "
                        f"gen={breakdown.gen} rank={breakdown.rank}"
                    )
                total.backward()
                grads = model.params.collect_grads()
                clip_global_norm(grads, config.grad_clip)
                adam_step(model.params, grads, config.effective_lr)
                weight = len(batch)
                epoch_gen += breakdown.gen * weight
                epoch_rank += breakdown.rank * weight
                epoch_total += breakdown.total * weight
                epoch_tokens += breakdown.tokens
                epoch_instances += breakdown.instances
                n_pairs += weight

            val = float(metric(model, valid_pairs))
            improved = val < result.best_val
            if improved:
                result.best_val = val
                result.best_epoch = epoch
                since_best = 0
                best_snapshot = _snapshot(model)
                if config.checkpoint:
                    model.save(config.checkpoint, vocab, extra={"epoch": epoch, "val_ppl": val})
            else:
                since_best += 1

            record = {
                "epoch": epoch,
                "gen": epoch_gen / n_pairs,
                "rank": epoch_rank / n_pairs,
                "total": epoch_total / n_pairs,
                "tokens": epoch_tokens,
                "instances": epoch_instances,
                "val_ppl": val,
                "improved": improved,
            }
            result.log.append(record)
            result.epochs_run = epoch + 1
            line = json.dumps(record)
            if log_fh:
                log_fh.write(line + "\n")
                log_fh.flush()
            if log_stream is not None:
                print(line, file=log_stream)

            if since_best >= config.patience:
                break
    finally:
        if log_fh:
            log_fh.close()

    if best_snapshot is not None:
        _restore_snapshot(model, best_snapshot)
    return result


def _snapshot(model: DialogueModel) -> dict:
    return {
        "tensors": {name: t.data.copy() for name, t in model.params.items()},
        "adam_m": copy.deepcopy(model.params.adam_m),
        "adam_v": copy.deepcopy(model.params.adam_v),
        "step": model.params.step,
    }


def _restore_snapshot(model: DialogueModel, snap: dict) -> None:
    for name, data in snap["tensors"].items():
        model.params.tensors[name].data = data.copy()
        model.params.tensors[name].grad = None
    model.params.adam_m = copy.deepcopy(snap["adam_m"])
    model.params.adam_v = copy.deepcopy(snap["adam_v"])
    model.params.step = snap["step"]
