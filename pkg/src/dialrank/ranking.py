"""Self-supervised utterance ranking over the history representation matrix.

Each position i of the history defines a retrieval problem: a query built
from utterances up to i (a sliding window for local ranking, the full prefix
for global ranking) must rank the immediately following utterance above all
later ones. The loss is the negative log-softmax of the true successor's
score over the candidate set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .layers import create_lstm_params, lstm_forward
from .params import ParameterStore
from .tensor import Tensor, add, concat, getitem, log_softmax, matmul, neg, stack, tanh, tmean

RANK_MODES = ("off", "local", "global")
SCORER_KINDS = ("mlp128", "linear")


@dataclass
class RankConfig:
    mode: str = "off"
    k: int = 2
    alpha: float = 0.01
    scorer: str = "mlp128"
    query_dim: int = 64
    scorer_hidden: int = 128

    def __post_init__(self):
        if self.mode not in RANK_MODES:
            raise ConfigError(f"unknown rank mode {self.mode!r}")
        if self.scorer not in SCORER_KINDS:
            raise ConfigError(f"unknown scorer kind {self.scorer!r}")
        if self.k not in (1, 2, 3):
            raise ConfigError(f"rank window size k must be 1, 2 or 3, got {self.k}")
        if self.alpha < 0:
            raise ConfigError("rank loss weight alpha must be >= 0")


@dataclass
class RankingInstance:
    """One query-vs-candidates problem.

    ``index`` is the 1-based position of the last query utterance, so the
    candidate rows are positions index+1 .. M and the true successor sits at
    candidate row 0.
    """

    index: int
    query: Tensor       # (query_dim,)
    candidates: Tensor  # (M - index, hidden_dim)


def create_ranking_params(store: ParameterStore, cfg: RankConfig, repr_dim: int, rng) -> None:
    create_lstm_params(store, "rank.q", repr_dim, cfg.query_dim, 1, rng)
    cat_dim = cfg.query_dim + repr_dim
    if cfg.scorer == "mlp128":
        store.create("rank.score.w1", (cat_dim, cfg.scorer_hidden), rng, "matrix")
        store.create("rank.score.b1", (cfg.scorer_hidden,), rng, "bias")
        store.create("rank.score.w2", (cfg.scorer_hidden, 1), rng, "matrix")
        store.create("rank.score.b2", (1,), rng, "bias")
    else:
        store.create("rank.score.w", (cat_dim, 1), rng, "matrix")
        store.create("rank.score.b", (1,), rng, "bias")


def _query_lstm(store: ParameterStore, rows: list[Tensor]) -> list[Tensor]:
    """Hidden state after each step of the query aggregator LSTM."""
    outputs, _ = lstm_forward(
        rows, None, store["rank.q.l0.wx"], store["rank.q.l0.wh"], store["rank.q.l0.b"]
    )
    return outputs


def build_local_queries(store: ParameterStore, u_matrix: Tensor, k: int) -> list[RankingInstance]:
    """Sliding-window queries: window (u_{i-k+1}..u_i) against candidates u_{>i}.

    Yields max(0, M-k) instances for positions i in [k, M-1] (1-based).
    """
    if k < 1:
        raise ConfigError(f"window size k must be >= 1, got {k}")
    m = u_matrix.shape[0]
    instances = []
    for i in range(k, m):  # i = 1-based query position index
        window = [getitem(u_matrix, t) for t in range(i - k, i)]
        query = _query_lstm(store, window)[-1]
        candidates = getitem(u_matrix, slice(i, m))
        instances.append(RankingInstance(index=i, query=query, candidates=candidates))
    return instances


def build_global_queries(store: ParameterStore, u_matrix: Tensor) -> list[RankingInstance]:
    """Prefix queries: (u_1..u_i) against candidates u_{>i}, i in [1, M-1].

    One aggregator pass serves every prefix; its step-i hidden state is the
    i-prefix query. Yields max(0, M-1) instances.
    """
    m = u_matrix.shape[0]
    if m < 2:
        return []
    rows = [getitem(u_matrix, t) for t in range(m - 1)]
    states = _query_lstm(store, rows)
    return [
        RankingInstance(index=i, query=states[i - 1], candidates=getitem(u_matrix, slice(i, m)))
        for i in range(1, m)
    ]


def score_candidates(store: ParameterStore, cfg: RankConfig, query: Tensor, candidates: Tensor) -> Tensor:
    """Scores for every candidate row, shape (n,).

    The affine map over the concatenation [q, u_t] is computed as the sum of
    a query part and a candidate part, which scores all rows in one matmul.
    """
    q_dim = cfg.query_dim
    if cfg.scorer == "mlp128":
        w1, b1 = store["rank.score.w1"], store["rank.score.b1"]
        pre = add(
            add(matmul(query, getitem(w1, slice(0, q_dim))),
                matmul(candidates, getitem(w1, slice(q_dim, w1.shape[0])))),
            b1,
        )
        hidden = tanh(pre)
        out = add(matmul(hidden, store["rank.score.w2"]), store["rank.score.b2"])
        return getitem(out, (slice(None), 0))
    w, b = store["rank.score.w"], store["rank.score.b"]
    q_part = matmul(query, getitem(w, (slice(0, q_dim), 0)))
    u_part = matmul(candidates, getitem(w, (slice(q_dim, w.shape[0]), 0)))
    return add(add(u_part, q_part), getitem(b, 0))


def rank_score(store: ParameterStore, cfg: RankConfig, query: Tensor, candidate: Tensor) -> Tensor:
    """Scalar relevance score for a single (query, candidate) pair."""
    cat = concat([query, candidate])
    if cfg.scorer == "mlp128":
        hidden = tanh(add(matmul(cat, store["rank.score.w1"]), store["rank.score.b1"]))
        return getitem(add(matmul(hidden, store["rank.score.w2"]), store["rank.score.b2"]), 0)
    return getitem(add(matmul(cat, store["rank.score.w"]), store["rank.score.b"]), 0)


def top1_listmle(scores: Tensor, positive_index: int = 0) -> Tensor:
    """Negative log-probability of the positive candidate ranking first."""
    return neg(getitem(log_softmax(scores), positive_index))


def _instance_losses(store: ParameterStore, cfg: RankConfig, instances: list[RankingInstance]) -> Tensor | None:
    if not instances:
        return None
    losses = [
        top1_listmle(score_candidates(store, cfg, inst.query, inst.candidates))
        for inst in instances
    ]
    return tmean(stack(losses))


def local_rank_loss(store: ParameterStore, cfg: RankConfig, u_matrix: Tensor) -> Tensor:
    """Mean ranking loss over the M-k window queries (0 when M <= k)."""
    loss = _instance_losses(store, cfg, build_local_queries(store, u_matrix, cfg.k))
    return loss if loss is not None else Tensor(0.0)


def global_rank_loss(store: ParameterStore, cfg: RankConfig, u_matrix: Tensor) -> Tensor:
    """Mean ranking loss over the M-1 prefix queries (0 when M < 2)."""
    loss = _instance_losses(store, cfg, build_global_queries(store, u_matrix))
    return loss if loss is not None else Tensor(0.0)


def rank_loss(store: ParameterStore, cfg: RankConfig, u_matrix: Tensor) -> Tensor:
    if cfg.mode == "local":
        return local_rank_loss(store, cfg, u_matrix)
    if cfg.mode == "global":
        return global_rank_loss(store, cfg, u_matrix)
    return Tensor(0.0)


def build_instances(store: ParameterStore, cfg: RankConfig, u_matrix: Tensor) -> list[RankingInstance]:
    if cfg.mode == "local":
        return build_local_queries(store, u_matrix, cfg.k)
    if cfg.mode == "global":
        return build_global_queries(store, u_matrix)
    return []


def rank_accuracy(store: ParameterStore, cfg: RankConfig, instances: list[RankingInstance]) -> float:
    """Fraction of instances whose top-scored candidate is the true successor.

    Ties count as correct only when the positive holds the first maximal slot.
    """
    if not instances:
        raise ValueError("rank_accuracy needs at least one instance")
    hits = 0
    for inst in instances:
        scores = score_candidates(store, cfg, inst.query, inst.candidates)
        if int(np.argmax(scores.data)) == 0:
            hits += 1
    return hits / len(instances)
