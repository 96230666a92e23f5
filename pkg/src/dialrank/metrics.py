"""Evaluation: per-word perplexity, distinct-n diversity, history-length
breakdowns, perturbation sensitivity, ranking diagnostics, and utterance
representation dumps.

Perplexity is the exponential of the corpus-level mean per-token negative
log-likelihood of the gold responses, token-weighted across pairs. Sums use
math.fsum, so aggregation is exact and independent of pair order.
"""

from __future__ import annotations

import csv
import math
from typing import Sequence

import numpy as np

from .corpus import PERTURBATION_KINDS, HistoryResponsePair, perturb_history
from .errors import ConfigError, DataError
from .params import rng_stream
from .ranking import rank_accuracy, score_candidates, top1_listmle

DEFAULT_BUCKETS = ((1, 10), (11, 15), (16, None))


def _pair_stats(model, pairs: Sequence[HistoryResponsePair]) -> tuple[list[float], list[int]]:
    nlls, counts = [], []
    for pair in pairs:
        gold = model.response_logprobs(pair)
        nlls.append(-math.fsum(gold.tolist()))
        counts.append(len(gold))
    return nlls, counts


def perplexity(model, pairs: Sequence[HistoryResponsePair]) -> float:
    """exp(total NLL / total tokens) over gold responses (EOS included)."""
    if not pairs:
        raise ValueError("perplexity over an empty pair list")
    nlls, counts = _pair_stats(model, pairs)
    tokens = sum(counts)
    if tokens == 0:
        raise ValueError("perplexity over zero tokens")
    return math.exp(math.fsum(nlls) / tokens)


def distinct_n(responses: Sequence[Sequence[int]], n: int) -> float:
    """Unique n-grams across all responses over total generated tokens."""
    if n not in (1, 2):
        raise ConfigError(f"distinct_n supports n in {{1, 2}}, got {n}")
    if not responses:
        raise ValueError("distinct_n over an empty response list")
    total = sum(len(r) for r in responses)
    if total == 0:
        raise ValueError("distinct_n over all-empty responses")
    grams = set()
    for resp in responses:
        for i in range(len(resp) - n + 1):
            grams.add(tuple(resp[i : i + n]))
    return len(grams) / total


def generate_responses(model, pairs: Sequence[HistoryResponsePair], max_len: int | None = None) -> list[list[int]]:
    out = []
    for pair in pairs:
        history = [list(u.tokens) for u in pair.history]
        out.append(model.generate(history, max_len).token_ids)
    return out


def ppl_by_history_length(
    model,
    pairs: Sequence[HistoryResponsePair],
    buckets: Sequence[tuple[int, int | None]] = DEFAULT_BUCKETS,
    reference: dict | None = None,
) -> dict:
    """Token-weighted PPL per history-length bucket, with optional deltas
    against another model's report (matched by bucket label)."""
    _check_buckets(buckets)
    nlls, counts = _pair_stats(model, pairs)
    report = {"overall": math.exp(math.fsum(nlls) / sum(counts)), "buckets": []}
    for lo, hi in buckets:
        label = _bucket_label(lo, hi)
        idx = [
            i
            for i, pair in enumerate(pairs)
            if len(pair.history) >= lo and (hi is None or len(pair.history) <= hi)
        ]
        entry = {"bucket": label, "lo": lo, "hi": hi, "count": len(idx)}
        if idx:
            tok = sum(counts[i] for i in idx)
            entry["ppl"] = math.exp(math.fsum(nlls[i] for i in idx) / tok)
        else:
            entry["ppl"] = None
        report["buckets"].append(entry)
    if reference is not None:
        ref = {b["bucket"]: b["ppl"] for b in reference["buckets"]}
        for entry in report["buckets"]:
            other = ref.get(entry["bucket"])
            entry["delta_ppl"] = (
                entry["ppl"] - other if entry["ppl"] is not None and other is not None else None
            )
        report["overall_delta"] = report["overall"] - reference["overall"]
    return report


def _bucket_label(lo: int, hi: int | None) -> str:
    if hi is None:
        return f">{lo - 1}"
    if lo <= 1:
        return f"<{hi + 1}"
    return f"{lo}-{hi}"


def _check_buckets(buckets) -> None:
    if not buckets:
        raise ConfigError("at least one history-length bucket is required")
    prev_hi = 0
    for lo, hi in buckets:
        if lo != prev_hi + 1:
            raise ConfigError(f"buckets must be disjoint and covering; got lo={lo} after hi={prev_hi}")
        if hi is not None and hi < lo:
            raise ConfigError(f"bucket ({lo}, {hi}) is empty by construction")
        prev_hi = hi if hi is not None else lo
    if buckets[-1][1] is not None:
        raise ConfigError("the final bucket must be open-ended (hi=None)")


def _perturbed_pairs(pairs, kind, seed) -> list[HistoryResponsePair]:
    out = []
    for i, pair in enumerate(pairs):
        child = int(np.random.SeedSequence(entropy=[seed, i]).generate_state(1)[0])
        out.append(
            HistoryResponsePair(
                history=perturb_history(pair.history, kind, child),
                response=pair.response,
                dialogue_id=pair.dialogue_id,
                turn_index=pair.turn_index,
            )
        )
    return out


def perturbation_report(
    model,
    pairs: Sequence[HistoryResponsePair],
    seeds: Sequence[int],
    kinds: Sequence[str] = PERTURBATION_KINDS,
) -> dict:
    """Mean PPL per perturbation kind over seeds, against the clean PPL.

    Histories are perturbed; responses never are.
    """
    if not seeds:
        raise ConfigError("perturbation_report needs at least one seed")
    base = perplexity(model, pairs)
    report = {"base_ppl": base, "kinds": {}}
    for kind in kinds:
        per_seed = [perplexity(model, _perturbed_pairs(pairs, kind, s)) for s in seeds]
        mean = math.fsum(per_seed) / len(per_seed)
        report["kinds"][kind] = {
            "ppl": mean,
            "delta_ppl": mean - base,
            "per_seed": per_seed,
        }
    return report


def rank_probe(model, pairs: Sequence[HistoryResponsePair]) -> dict:
    """Ranking-head diagnostics: accuracy and mean loss over all instances."""
    store, cfg = model.params, model.config.rank
    if cfg.mode == "off":
        raise ConfigError("rank-probe requires rank mode local or global")
    instances = []
    for pair in pairs:
        instances.extend(model.ranking_instances([list(u.tokens) for u in pair.history]))
    if not instances:
        return {"instances": 0, "accuracy": None, "mean_loss": None}
    losses = [
        float(top1_listmle(score_candidates(store, cfg, inst.query, inst.candidates)).data)
        for inst in instances
    ]
    return {
        "instances": len(instances),
        "accuracy": rank_accuracy(store, cfg, instances),
        "mean_loss": math.fsum(losses) / len(losses),
    }


def dump_utterance_embeddings(
    model,
    pairs: Sequence[HistoryResponsePair],
    sample_per_position: int,
    path: str,
    seed: int = 0,
) -> int:
    """Write sampled utterance representations to CSV, keyed by history
    position (1-based). Returns the number of rows written."""
    if sample_per_position < 1:
        raise ConfigError("sample_per_position must be >= 1")
    by_position: dict[int, list[np.ndarray]] = {}
    for pair in pairs:
        enc = model.encode([list(u.tokens) for u in pair.history])
        reprs = enc.utterance_reprs.data
        for j in range(reprs.shape[0]):
            by_position.setdefault(j + 1, []).append(reprs[j])
    rng = rng_stream(seed, "sampling")
    rows = 0
    dim = model.config.encoder.hidden_dim
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write embedding dump to {path}: {exc}") from exc
    with fh:
        writer = csv.writer(fh)
        writer.writerow(["position_index"] + [f"e{i}" for i in range(dim)])
        for position in sorted(by_position):
            vectors = by_position[position]
            take = min(sample_per_position, len(vectors))
            chosen = rng.choice(len(vectors), size=take, replace=False)
            for idx in sorted(chosen):
                writer.writerow([position] + [repr(float(v)) for v in vectors[idx]])
                rows += 1
    return rows
