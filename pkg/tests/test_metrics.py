"""Metrics: perplexity aggregation, distinct-n, history-length buckets,
perturbation reports, and embedding dumps."""

import csv
import math

import numpy as np
import pytest

from dialrank.errors import ConfigError
from dialrank.metrics import (
    distinct_n,
    dump_utterance_embeddings,
    perplexity,
    perturbation_report,
    ppl_by_history_length,
    rank_probe,
)
from dialrank.model import DialogueModel, make_pair, preset_config
from dialrank.ranking import RankConfig

VOCAB = 10


def pair_with_history_len(m, response_len=2):
    history = [[4 + (i % 5), 5 + (i % 4)] for i in range(m)]
    return make_pair(history, [4] * response_len)


class _StubModel:
    """Evaluation protocol stub: fixed per-token gold log-probabilities."""

    def __init__(self, table):
        self.table = table  # pair id -> np.ndarray of logprobs

    def response_logprobs(self, pair):
        return np.asarray(self.table[id(pair)], dtype=float)


def uniform_model(vocab_size=VOCAB):
    cfg = preset_config(
        "seq2seq", vocab_size=vocab_size, embed_dim=3, hidden_dim=4, num_layers=1,
        rank=RankConfig(mode="off", query_dim=3, scorer_hidden=2),
    )
    model = DialogueModel(cfg, seed=0)
    model.params["dec.out.w"].data[:] = 0.0
    model.params["dec.out.b"].data[:] = 0.0
    return model


class TestPerplexity:
    def test_uniform_model_scores_vocab_size(self):
        model = uniform_model()
        pairs = [pair_with_history_len(2), pair_with_history_len(3, 4)]
        assert perplexity(model, pairs) == pytest.approx(VOCAB, abs=1e-6)

    def test_delta_on_gold_scores_one(self):
        pairs = [pair_with_history_len(2), pair_with_history_len(1)]
        stub = _StubModel({id(p): np.zeros(len(p.response.tokens) + 1) for p in pairs})
        assert perplexity(stub, pairs) == 1.0

    def test_two_pair_fixture_matches_hand_computation(self):
        # pair A: 3 tokens with logprobs -0.5, -1.0, -0.25
        # pair B: 2 tokens with logprobs -2.0, -0.75
        # PPL = exp((0.5 + 1.0 + 0.25 + 2.0 + 0.75) / 5) = exp(0.9)
        pairs = [pair_with_history_len(1, 2), pair_with_history_len(2, 1)]
        stub = _StubModel(
            {id(pairs[0]): [-0.5, -1.0, -0.25], id(pairs[1]): [-2.0, -0.75]}
        )
        assert perplexity(stub, pairs) == pytest.approx(math.exp(0.9), abs=1e-12)

    def test_pair_order_invariance_is_exact(self):
        rng = np.random.default_rng(3)
        pairs = [pair_with_history_len(1 + i % 3) for i in range(7)]
        stub = _StubModel({id(p): -rng.uniform(0.1, 3.0, size=4) for p in pairs})
        forward = perplexity(stub, pairs)
        backward = perplexity(stub, list(reversed(pairs)))
        assert forward == backward  # fsum aggregation: bit-identical

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            perplexity(uniform_model(), [])


class TestDistinct:
    def test_hand_counted_fixture(self):
        # ["a b", "a b"]: 2 unique unigrams / 4 tokens, 1 unique bigram / 4
        responses = [[7, 8], [7, 8]]
        assert distinct_n(responses, 1) == 0.5
        assert distinct_n(responses, 2) == 0.25

    def test_single_one_token_response(self):
        assert distinct_n([[5]], 1) == 1.0

    def test_m_identical_single_tokens(self):
        for m in (2, 5, 10):
            assert distinct_n([[4]] * m, 1) == pytest.approx(1.0 / m)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        responses = [list(rng.integers(4, 9, size=rng.integers(1, 6))) for _ in range(8)]
        base = (distinct_n(responses, 1), distinct_n(responses, 2))
        perm = [responses[i] for i in rng.permutation(len(responses))]
        assert (distinct_n(perm, 1), distinct_n(perm, 2)) == base

    def test_errors(self):
        with pytest.raises(ValueError):
            distinct_n([], 1)
        with pytest.raises(ValueError):
            distinct_n([[], []], 1)
        with pytest.raises(ConfigError):
            distinct_n([[1]], 3)


class TestHistoryLengthBuckets:
    def test_single_bucket_equals_global_ppl(self):
        pairs = [pair_with_history_len(2), pair_with_history_len(3)]
        stub = _StubModel({id(p): [-0.4, -0.9] for p in pairs})
        report = ppl_by_history_length(stub, pairs, buckets=((1, None),))
        assert report["buckets"][0]["ppl"] == pytest.approx(report["overall"], abs=1e-15)
        assert report["buckets"][0]["count"] == 2

    def test_fixture_counts_match_hand_tally(self):
        # history lengths: 2, 2, 12, 13, 16, 20 -> buckets <11: 2, 11-15: 2, >15: 2
        lengths = [2, 2, 12, 13, 16, 20]
        pairs = [pair_with_history_len(m) for m in lengths]
        stub = _StubModel({id(p): [-1.0, -1.0] for p in pairs})
        report = ppl_by_history_length(stub, pairs)
        assert [b["count"] for b in report["buckets"]] == [2, 2, 2]
        assert [b["bucket"] for b in report["buckets"]] == ["<11", "11-15", ">15"]

    def test_identical_models_have_zero_deltas(self):
        pairs = [pair_with_history_len(m) for m in (2, 12, 17)]
        stub = _StubModel({id(p): [-0.5, -1.5] for p in pairs})
        ref = ppl_by_history_length(stub, pairs)
        report = ppl_by_history_length(stub, pairs, reference=ref)
        assert all(b["delta_ppl"] == 0.0 for b in report["buckets"])
        assert report["overall_delta"] == 0.0

    def test_empty_bucket_reported_with_count_zero(self):
        pairs = [pair_with_history_len(2)]
        stub = _StubModel({id(pairs[0]): [-1.0]})
        report = ppl_by_history_length(stub, pairs)
        empty = report["buckets"][1]
        assert empty["count"] == 0
        assert empty["ppl"] is None

    def test_non_covering_buckets_rejected(self):
        pairs = [pair_with_history_len(2)]
        stub = _StubModel({id(pairs[0]): [-1.0]})
        with pytest.raises(ConfigError):
            ppl_by_history_length(stub, pairs, buckets=((1, 5), (7, None)))


class TestPerturbationReport:
    def test_reverse_on_single_utterance_histories_is_identity(self):
        model = uniform_model()
        pairs = [pair_with_history_len(1) for _ in range(3)]
        report = perturbation_report(model, pairs, seeds=[0, 1], kinds=("utterance_reverse",))
        assert report["kinds"]["utterance_reverse"]["delta_ppl"] == 0.0

    def test_base_ppl_matches_standalone_bit_for_bit(self):
        model = uniform_model()
        pairs = [pair_with_history_len(3), pair_with_history_len(2)]
        report = perturbation_report(model, pairs, seeds=[0])
        assert report["base_ppl"] == perplexity(model, pairs)

    def test_repeat_runs_identical(self):
        model = uniform_model()
        pairs = [pair_with_history_len(4), pair_with_history_len(3)]
        a = perturbation_report(model, pairs, seeds=[0, 1])
        b = perturbation_report(model, pairs, seeds=[0, 1])
        assert a == b

    def test_all_five_kinds_present(self):
        model = uniform_model()
        pairs = [pair_with_history_len(3)]
        report = perturbation_report(model, pairs, seeds=[0])
        assert set(report["kinds"]) == {
            "word_shuffle", "word_reverse", "utterance_shuffle",
            "utterance_reverse", "utterance_drop",
        }

    def test_no_seeds_rejected(self):
        with pytest.raises(ConfigError):
            perturbation_report(uniform_model(), [pair_with_history_len(2)], seeds=[])


class TestEmbeddingDump:
    def _model(self):
        cfg = preset_config(
            "seq2seq", vocab_size=VOCAB, embed_dim=3, hidden_dim=4, num_layers=1,
            rank=RankConfig(mode="off", query_dim=3, scorer_hidden=2),
        )
        return DialogueModel(cfg, seed=0)

    def test_row_count_is_min_of_available_and_requested(self, tmp_path):
        model = self._model()
        pairs = [pair_with_history_len(3), pair_with_history_len(2)]
        # positions: 1 -> 2 available, 2 -> 2, 3 -> 1
        path = str(tmp_path / "emb.csv")
        rows = dump_utterance_embeddings(model, pairs, sample_per_position=2, path=path)
        assert rows == 2 + 2 + 1

    def test_single_pair_at_most_m_rows(self, tmp_path):
        model = self._model()
        pairs = [pair_with_history_len(3)]
        path = str(tmp_path / "emb.csv")
        rows = dump_utterance_embeddings(model, pairs, sample_per_position=1, path=path)
        assert rows <= 3

    def test_csv_round_trips_bit_equal(self, tmp_path):
        model = self._model()
        pairs = [pair_with_history_len(2)]
        path = str(tmp_path / "emb.csv")
        dump_utterance_embeddings(model, pairs, sample_per_position=5, path=path, seed=3)
        enc = model.encode([list(u.tokens) for u in pairs[0].history])
        expected = enc.utterance_reprs.data
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            assert header[0] == "position_index"
            for row in reader:
                pos = int(row[0])
                vec = np.array([float(v) for v in row[1:]])
                assert np.array_equal(vec, expected[pos - 1])

    def test_bad_sample_count_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            dump_utterance_embeddings(self._model(), [pair_with_history_len(2)], 0, str(tmp_path / "x.csv"))


class TestRankProbe:
    def test_probe_reports_instances_and_accuracy(self):
        cfg = preset_config(
            "seq2seq", vocab_size=VOCAB, embed_dim=3, hidden_dim=4, num_layers=1,
            rank=RankConfig(mode="global", query_dim=3, scorer_hidden=2),
        )
        model = DialogueModel(cfg, seed=0)
        pairs = [pair_with_history_len(3), pair_with_history_len(4)]
        probe = rank_probe(model, pairs)
        assert probe["instances"] == 2 + 3
        assert 0.0 <= probe["accuracy"] <= 1.0
        assert probe["mean_loss"] >= 0.0

    def test_mode_off_rejected(self):
        model = uniform_model()
        with pytest.raises(ConfigError):
            rank_probe(model, [pair_with_history_len(2)])
