"""Training loop: loss arithmetic, early stopping, determinism, resume."""

import os

import numpy as np
import pytest

from dialrank.corpus import Dialogue, build_vocab, expand_corpus, tokenize
from dialrank.errors import ConfigError, NumericalError
from dialrank.metrics import perplexity
from dialrank.model import DialogueModel, make_pair, preset_config
from dialrank.ranking import RankConfig
from dialrank.trainer import TrainConfig, joint_loss, train

VOCAB_WORDS = [f"w{i}" for i in range(8)]


def tiny_pairs(n_dialogues=3, turns=4, seed=0):
    rng = np.random.default_rng(seed)
    vocab = build_vocab([[" ".join(VOCAB_WORDS)]])
    dialogues = []
    for d in range(n_dialogues):
        utts = tuple(
            tokenize(" ".join(rng.choice(VOCAB_WORDS, size=2)), vocab) for _ in range(turns)
        )
        dialogues.append(Dialogue(id=f"d{d}", utterances=utts))
    return vocab, expand_corpus(dialogues)


def tiny_config(**kw):
    base = dict(
        model="seq2seq", embed_dim=3, hidden_dim=4, num_layers=1,
        rank_query_dim=3, rank_scorer_hidden=2, batch_size=4,
        max_epochs=2, patience=10, lr=0.01, seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestJointLoss:
    def _model(self, mode="global", alpha=0.01, seed=0):
        cfg = preset_config(
            "seq2seq", vocab_size=12, embed_dim=3, hidden_dim=4, num_layers=1,
            rank=RankConfig(mode=mode, alpha=alpha, query_dim=3, scorer_hidden=2),
        )
        return DialogueModel(cfg, seed=seed)

    def _batch(self):
        return [
            make_pair([[4, 5], [6, 7], [8, 9]], [5, 6]),
            make_pair([[10, 11], [4, 6]], [7]),
        ]

    def test_total_equals_gen_plus_alpha_rank(self):
        model = self._model(alpha=0.01)
        total, br = joint_loss(self._batch(), model, alpha=0.01)
        assert br.total - br.gen == pytest.approx(0.01 * br.rank, abs=1e-12)
        assert br.rank > 0.0

    def test_alpha_zero_total_is_gen_exactly(self):
        model = self._model(alpha=0.0)
        total, br = joint_loss(self._batch(), model, alpha=0.0)
        assert br.total == br.gen  # bitwise: adding 0.0 * rank changes nothing
        total.backward()
        for name, t in model.params.items():
            if name.startswith("rank.score"):
                assert t.grad is None or np.all(t.grad == 0.0), name

    def test_mode_off_rank_is_zero(self):
        model = self._model(mode="off")
        _, br = joint_loss(self._batch(), model, alpha=0.01)
        assert br.rank == 0.0
        assert br.total == br.gen

    def test_alpha_zero_matches_mode_off_bitwise(self):
        zero_alpha = self._model(mode="global", alpha=0.0, seed=5)
        off = self._model(mode="off", seed=5)
        batch = self._batch()
        _, br_a = joint_loss(batch, zero_alpha, alpha=0.0)
        _, br_b = joint_loss(batch, off, alpha=0.0)
        assert br_a.gen == br_b.gen
        assert br_a.total == br_b.total

    def test_empty_batch_rejected(self):
        with pytest.raises(ConfigError):
            joint_loss([], self._model(), alpha=0.1)


class TestTrainingLoop:
    def test_single_epoch_writes_checkpoint(self, tmp_path):
        vocab, pairs = tiny_pairs()
        ckpt = str(tmp_path / "m.ckpt.json")
        cfg = tiny_config(max_epochs=1, checkpoint=ckpt)
        result = train(cfg, pairs[:2], pairs[2:4], vocab=vocab)
        assert result.epochs_run == 1
        assert os.path.exists(ckpt)
        assert len(result.log) == 1

    def test_worsening_metric_stops_after_patience_plus_one(self):
        vocab, pairs = tiny_pairs()
        values = iter(range(1, 100))  # strictly worsening: 1, 2, 3, ...

        def metric(model, valid):
            return float(next(values))

        cfg = tiny_config(max_epochs=50, patience=3)
        result = train(cfg, pairs[:2], pairs[2:4], vocab=vocab, metric_fn=metric)
        assert result.epochs_run == cfg.patience + 1
        assert result.best_epoch == 0

    def test_improving_metric_never_stops_early(self):
        vocab, pairs = tiny_pairs()
        values = iter(range(100, 0, -1))

        def metric(model, valid):
            return float(next(values))

        cfg = tiny_config(max_epochs=5, patience=2)
        result = train(cfg, pairs[:2], pairs[2:4], vocab=vocab, metric_fn=metric)
        assert result.epochs_run == 5

    def test_same_seed_identical_run_logs(self, tmp_path):
        vocab, pairs = tiny_pairs()
        logs = []
        for run in range(2):
            path = str(tmp_path / f"log{run}.jsonl")
            cfg = tiny_config(max_epochs=3, rank_mode="global", rank_alpha=0.5, run_log=path)
            train(cfg, pairs[:4], pairs[4:6], vocab=vocab)
            with open(path) as fh:
                logs.append(fh.read())
        assert logs[0] == logs[1]

    def test_returned_model_is_best_epoch(self):
        vocab, pairs = tiny_pairs()
        seen = []

        def metric(model, valid):
            # worsen after the second epoch; remember each epoch's params
            seen.append(model.params["embed"].data.copy())
            return [5.0, 1.0, 7.0, 9.0][len(seen) - 1]

        cfg = tiny_config(max_epochs=4, patience=10)
        result = train(cfg, pairs[:2], pairs[2:4], vocab=vocab, metric_fn=metric)
        assert result.best_epoch == 1
        assert np.array_equal(result.model.params["embed"].data, seen[1])

    def test_non_finite_loss_aborts_with_location(self):
        vocab, pairs = tiny_pairs()
        cfg = tiny_config()
        model = DialogueModel(cfg.model_config(len(vocab)), seed=0)
        model.params["embed"].data[:] = np.nan
        with pytest.raises(NumericalError, match="epoch 0 batch 0"):
            train(cfg, pairs[:2], pairs[2:4], vocab=vocab, model=model)

    def test_alpha_zero_training_bit_identical_to_mode_off(self):
        vocab, pairs = tiny_pairs()
        runs = {}
        for mode, alpha in (("global", 0.0), ("off", 0.0)):
            cfg = tiny_config(max_epochs=2, rank_mode=mode, rank_alpha=alpha)
            result = train(cfg, pairs[:4], pairs[4:6], vocab=vocab)
            runs[mode] = result
        gen_a = [rec["gen"] for rec in runs["global"].log]
        gen_b = [rec["gen"] for rec in runs["off"].log]
        assert gen_a == gen_b
        for name, t in runs["global"].model.params.items():
            assert np.array_equal(t.data, runs["off"].model.params[name].data), name

    def test_checkpoint_round_trip_preserves_validation_ppl(self, tmp_path):
        vocab, pairs = tiny_pairs()
        ckpt = str(tmp_path / "m.ckpt.json")
        cfg = tiny_config(max_epochs=2, checkpoint=ckpt, rank_mode="global")
        result = train(cfg, pairs[:4], pairs[4:6], vocab=vocab)
        direct = perplexity(result.model, pairs[4:6])
        loaded, _ = DialogueModel.load(ckpt)
        reloaded = perplexity(loaded, pairs[4:6])
        assert abs(direct - reloaded) < 1e-9

    def test_empty_split_rejected(self):
        vocab, pairs = tiny_pairs()
        with pytest.raises(ConfigError):
            train(tiny_config(), [], pairs[:2], vocab=vocab)


class TestTrainConfig:
    def test_dotted_keys_map_to_fields(self):
        cfg = TrainConfig.from_dict(
            {"model": "hred", "rank.mode": "local", "rank.k": 3, "rank.alpha": 0.5, "lr": 0.002}
        )
        assert cfg.model == "hred"
        assert cfg.rank_mode == "local"
        assert cfg.rank_k == 3
        assert cfg.rank_alpha == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"modell": "hred"})

    def test_encoder_decoder_kind_overrides(self):
        cfg = TrainConfig.from_dict(
            {"model": "seq2seq", "encoder_kind": "hier_transformer", "decoder_kind": "lstm_attn",
             "embed_dim": 3, "hidden_dim": 4, "num_layers": 1}
        )
        mc = cfg.model_config(8)
        assert mc.encoder.kind == "hier_transformer"
        assert mc.decoder.kind == "lstm_attn"
        from dialrank.model import DialogueModel, make_pair

        model = DialogueModel(mc, seed=0)
        out = model.generate([[4, 5], [6]], max_len=3)
        assert out.stopped_by in ("eos", "max_len")

    def test_family_default_lr(self):
        assert TrainConfig(model="seq2seq").effective_lr == 0.005
        assert TrainConfig(model="hred").effective_lr == 0.005
        assert TrainConfig(model="transformer").effective_lr == 0.001
        assert TrainConfig(model="recosa").effective_lr == 0.001
        assert TrainConfig(model="transformer", lr=0.9).effective_lr == 0.9

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(model="nope")
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(rank_alpha=-1.0)
