"""Command-line entry point.

Subcommands: prepare, train, eval, generate, perturb-eval, rank-probe,
dump-embeddings. Machine-readable JSON goes to stdout, human logs to stderr.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import corpus as corpus_mod
from . import metrics
from .corpus import (
    Vocab,
    build_vocab,
    expand_corpus,
    load_corpus,
    load_pair_cache,
    read_raw_dialogs,
    save_pair_cache,
    tokenize,
)
from .errors import ConfigError, DataError, NumericalError
from .model import DialogueModel
from .trainer import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(doc) -> None:
    print(json.dumps(doc))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dialrank")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build vocabulary and tokenized pair cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="cache file to write")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-vocab", type=int, default=None)
    p.add_argument("--max-utt-len", type=int, default=corpus_mod.MAX_UTTERANCE_LEN)
    p.add_argument("--max-resp-len", type=int, default=corpus_mod.MAX_RESPONSE_LEN)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--buckets", action="store_true", help="include history-length breakdown")
    p.add_argument("--perturb", action="store_true", help="include perturbation table")
    p.add_argument("--perturb-seeds", type=int, default=3)
    p.add_argument("--dump-emb", default=None, help="CSV path for utterance representations")
    p.add_argument("--max-decode-len", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="greedy responses for histories (JSONL in, JSONL out)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help='JSONL with {"history": [utterances]}')
    p.add_argument("--output", required=True)
    p.add_argument("--max-len", type=int, default=32)

    p = sub.add_parser("perturb-eval", help="perturbation sensitivity table")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seeds", type=int, default=3)

    p = sub.add_parser("rank-probe", help="ranking accuracy and loss for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("dump-embeddings", help="sampled utterance representations to CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-position", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_model(path: str) -> tuple[DialogueModel, Vocab]:
    model, vocab = DialogueModel.load(path)
    if vocab is None:
        raise DataError(f"{path}: checkpoint carries no vocabulary")
    return model, vocab


def _pairs_from_corpus(path: str, vocab: Vocab, max_utt: int = corpus_mod.MAX_UTTERANCE_LEN,
                       max_resp: int = corpus_mod.MAX_RESPONSE_LEN):
    dialogues, stats = load_corpus(path, vocab, max_utt)
    pairs = expand_corpus(dialogues, max_resp)
    _log(f"{path}: {stats.kept} dialogues ({stats.dropped_short} dropped), {len(pairs)} pairs")
    return pairs


def cmd_prepare(args) -> None:
    raw, stats = read_raw_dialogs(args.corpus)
    vocab = build_vocab(raw, args.min_count, args.max_vocab)
    dialogues, _ = load_corpus(args.corpus, vocab, args.max_utt_len)
    save_pair_cache(args.out, vocab, dialogues)
    pairs = expand_corpus(dialogues, args.max_resp_len)
    _log(f"prepared {args.out}")
    _emit(
        {
            "dialogues": stats.kept,
            "dropped_short": stats.dropped_short,
            "pairs": len(pairs),
            "vocab_size": len(vocab),
            "cache": args.out,
        }
    )


def cmd_train(args) -> None:
    config = TrainConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if not config.train_corpus or not config.valid_corpus:
        raise ConfigError("config must set train_corpus and valid_corpus")

    # A resumed run must tokenize with the checkpoint's vocabulary, not a
    # freshly built one, or token ids would not line up.
    model = None
    vocab = None
    if args.resume:
        model, vocab = _load_model(args.resume)
        _log(f"resumed from {args.resume}")

    if config.train_corpus.endswith(".cache.json"):
        cache_vocab, dialogues = load_pair_cache(config.train_corpus)
        if vocab is None:
            vocab = cache_vocab
    else:
        if vocab is None:
            raw, _ = read_raw_dialogs(config.train_corpus)
            vocab = build_vocab(raw, config.min_count, config.max_vocab)
        dialogues, _ = load_corpus(config.train_corpus, vocab, config.max_utterance_len)
    train_pairs = expand_corpus(dialogues, config.max_response_len)
    valid_dialogues, _ = load_corpus(config.valid_corpus, vocab, config.max_utterance_len)
    valid_pairs = expand_corpus(valid_dialogues, config.max_response_len)

    result = train(config, train_pairs, valid_pairs, vocab=vocab, model=model, log_stream=sys.stderr)
    if config.checkpoint:
        result.model.save(config.checkpoint, vocab, extra={"best_val_ppl": result.best_val})
    _emit(
        {
            "epochs": result.epochs_run,
            "best_epoch": result.best_epoch,
            "best_val_ppl": result.best_val,
            "checkpoint": config.checkpoint,
            "run_log": config.run_log,
        }
    )


def cmd_eval(args) -> None:
    model, vocab = _load_model(args.ckpt)
    max_utt, max_resp, max_decode = (
        corpus_mod.MAX_UTTERANCE_LEN, corpus_mod.MAX_RESPONSE_LEN, args.max_decode_len
    )
    if args.config:
        cfg = TrainConfig.from_file(args.config)
        max_utt, max_resp, max_decode = cfg.max_utterance_len, cfg.max_response_len, cfg.max_decode_len
    pairs = _pairs_from_corpus(args.corpus, vocab, max_utt, max_resp)
    report = {"ppl": metrics.perplexity(model, pairs)}
    responses = metrics.generate_responses(model, pairs, max_decode)
    nonempty = [r for r in responses if r]
    if nonempty:
        report["dist1"] = metrics.distinct_n(nonempty, 1)
        report["dist2"] = metrics.distinct_n(nonempty, 2)
    else:
        report["dist1"] = report["dist2"] = None
    if args.buckets:
        report["history_length"] = metrics.ppl_by_history_length(model, pairs)
    if args.perturb:
        report["perturbations"] = metrics.perturbation_report(
            model, pairs, seeds=list(range(args.perturb_seeds))
        )
    if args.dump_emb:
        rows = metrics.dump_utterance_embeddings(model, pairs, 1000, args.dump_emb, args.seed)
        report["embedding_dump"] = {"path": args.dump_emb, "rows": rows}
    _emit(report)


def cmd_generate(args) -> None:
    model, vocab = _load_model(args.ckpt)
    written = 0
    with open(args.input, "r", encoding="utf-8") as src, open(args.output, "w", encoding="utf-8") as dst:
        for lineno, line in enumerate(src, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{args.input}:{lineno}: invalid JSON ({exc})") from exc
            if "history" not in record or not isinstance(record["history"], list):
                raise DataError(f'{args.input}:{lineno}: expected a "history" list')
            history = [list(tokenize(u, vocab).tokens) for u in record["history"]]
            out = model.generate(history, args.max_len)
            text = corpus_mod.detokenize(out.token_ids, vocab)
            dst.write(
                json.dumps(
                    {"response": text, "token_ids": out.token_ids, "stopped_by": out.stopped_by}
                )
                + "\n"
            )
            written += 1
    _emit({"responses": written, "output": args.output})


def cmd_perturb_eval(args) -> None:
    model, vocab = _load_model(args.ckpt)
    pairs = _pairs_from_corpus(args.corpus, vocab)
    _emit(metrics.perturbation_report(model, pairs, seeds=list(range(args.seeds))))


def cmd_rank_probe(args) -> None:
    model, vocab = _load_model(args.ckpt)
    pairs = _pairs_from_corpus(args.corpus, vocab)
    _emit(metrics.rank_probe(model, pairs))


def cmd_dump_embeddings(args) -> None:
    model, vocab = _load_model(args.ckpt)
    pairs = _pairs_from_corpus(args.corpus, vocab)
    rows = metrics.dump_utterance_embeddings(model, pairs, args.per_position, args.out, args.seed)
    _emit({"rows": rows, "path": args.out})


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "perturb-eval": cmd_perturb_eval,
    "rank-probe": cmd_rank_probe,
    "dump-embeddings": cmd_dump_embeddings,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            _log(exc.code)
            return 1
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 1
    except FileNotFoundError as exc:
        _log(f"missing file: {exc}")
        return 2
    except DataError as exc:
        _log(f"data error: {exc}")
        return 2
    except NumericalError as exc:
        _log(f"numerical failure: {exc}")
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
