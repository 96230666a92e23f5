"""Corpus ingestion: JSONL dialogues, vocabulary, history-response pairs,
and history perturbations.

Corpus files are line-delimited JSON, one record per dialogue:
``{"dialog": ["utterance one", "utterance two", ...]}``. Dialogues shorter
than two utterances are dropped (and counted); blank utterances are a load
error.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

MAX_UTTERANCE_LEN = 32
MAX_RESPONSE_LEN = 32

PERTURBATION_KINDS = (
    "word_shuffle",
    "word_reverse",
    "utterance_shuffle",
    "utterance_reverse",
    "utterance_drop",
)

# Words, angle-bracket specials (so "<unk>" survives a round trip), or a
# single punctuation character.
_TOKEN_RE = re.compile(r"<\w+>|\w+|[^\w\s]")


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[int, ...]
    raw: str


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]


@dataclass(frozen=True)
class HistoryResponsePair:
    history: tuple[Utterance, ...]
    response: Utterance
    dialogue_id: str
    turn_index: int


@dataclass
class LoadStats:
    records: int = 0
    kept: int = 0
    dropped_short: int = 0


class Vocab:
    """Token/id mapping with fixed reserved ids 0..3 (PAD, UNK, BOS, EOS)."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(RESERVED) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]


def split_text(text: str) -> list[str]:
    """Lowercase and split into word/punctuation tokens."""
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise DataError(f"cannot tokenize blank text: {text!r}")
    return tokens


def tokenize(text: str, vocab: Vocab, max_len: int = MAX_UTTERANCE_LEN) -> Utterance:
    tokens = split_text(text)[:max_len]
    return Utterance(tuple(vocab.id(t) for t in tokens), text)


def detokenize(tokens: Iterable[int], vocab: Vocab) -> str:
    return " ".join(vocab.token(t) for t in tokens)


def build_vocab(
    raw_dialogs: Iterable[Sequence[str]],
    min_count: int = 1,
    max_size: int | None = None,
) -> Vocab:
    """Frequency vocabulary: most frequent first, ties broken lexicographically."""
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    seen = False
    for dialog in raw_dialogs:
        for utterance in dialog:
            seen = True
            counts.update(split_text(utterance))
    if not seen:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [(tok, n) for tok, n in counts.items() if n >= min_count and tok not in RESERVED]
    kept.sort(key=lambda item: (-item[1], item[0]))
    if max_size is not None:
        kept = kept[:max_size]
    return Vocab([tok for tok, _ in kept])


def read_raw_dialogs(path: str) -> tuple[list[list[str]], LoadStats]:
    """Parse a JSONL corpus file into lists of utterance strings."""
    stats = LoadStats()
    dialogs: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            stats.records += 1
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict) or "dialog" not in record:
                raise DataError(f'{path}:{lineno}: record must be an object with a "dialog" field')
            utterances = record["dialog"]
            if not isinstance(utterances, list) or not all(isinstance(u, str) for u in utterances):
                raise DataError(f'{path}:{lineno}: "dialog" must be a list of strings')
            for u in utterances:
                if not u.strip():
                    raise DataError(f"{path}:{lineno}: blank utterance")
            if len(utterances) < 2:
                stats.dropped_short += 1
                continue
            stats.kept += 1
            dialogs.append(utterances)
    if stats.records == 0:
        raise DataError(f"{path}: empty corpus file")
    return dialogs, stats


def load_corpus(
    path: str,
    vocab: Vocab,
    max_utterance_len: int = MAX_UTTERANCE_LEN,
) -> tuple[list[Dialogue], LoadStats]:
    """Read, tokenize, and numericalize a corpus file."""
    raw, stats = read_raw_dialogs(path)
    dialogues = [
        Dialogue(
            id=f"d{i}",
            utterances=tuple(tokenize(u, vocab, max_utterance_len) for u in dialog),
        )
        for i, dialog in enumerate(raw)
    ]
    return dialogues, stats


def expand_pairs(
    dialogue: Dialogue,
    max_response_len: int = MAX_RESPONSE_LEN,
) -> list[HistoryResponsePair]:
    """All (history prefix, next utterance) instances of one dialogue.

    A dialogue of T utterances yields T-1 pairs with history lengths 1..T-1.
    """
    utterances = dialogue.utterances
    pairs = []
    for j in range(1, len(utterances)):
        response = utterances[j]
        if len(response.tokens) > max_response_len:
            response = Utterance(response.tokens[:max_response_len], response.raw)
        pairs.append(
            HistoryResponsePair(
                history=utterances[:j],
                response=response,
                dialogue_id=dialogue.id,
                turn_index=j,
            )
        )
    return pairs


def expand_corpus(dialogues: Iterable[Dialogue], max_response_len: int = MAX_RESPONSE_LEN) -> list[HistoryResponsePair]:
    pairs: list[HistoryResponsePair] = []
    for d in dialogues:
        pairs.extend(expand_pairs(d, max_response_len))
    return pairs


def perturb_history(
    history: Sequence[Utterance],
    kind: str,
    seed: int,
) -> tuple[Utterance, ...]:
    """Apply one history perturbation; pure and reproducible given the seed.

    word_shuffle / word_reverse act inside each utterance independently;
    utterance_shuffle / utterance_reverse / utterance_drop act on the
    utterance order (drop is a no-op on single-utterance histories).
    """
    if len(history) == 0:
        raise DataError("cannot perturb an empty history")
    if kind not in PERTURBATION_KINDS:
        raise ConfigError(f"unknown perturbation kind {kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed]))
    if kind == "word_shuffle":
        out = []
        for u in history:
            perm = rng.permutation(len(u.tokens))
            out.append(Utterance(tuple(u.tokens[i] for i in perm), u.raw))
        return tuple(out)
    if kind == "word_reverse":
        return tuple(Utterance(u.tokens[::-1], u.raw) for u in history)
    if kind == "utterance_shuffle":
        perm = rng.permutation(len(history))
        return tuple(history[i] for i in perm)
    if kind == "utterance_reverse":
        return tuple(reversed(history))
    # utterance_drop
    if len(history) == 1:
        return tuple(history)
    drop = int(rng.integers(len(history)))
    return tuple(u for i, u in enumerate(history) if i != drop)


# -- prepared-pair cache -------------------------------------------------------

CACHE_FORMAT = "dialrank-pairs"
CACHE_VERSION = 1


def save_pair_cache(path: str, vocab: Vocab, dialogues: list[Dialogue]) -> None:
    doc = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "vocab": vocab.id_to_token[len(RESERVED):],
        "dialogues": [
            {"id": d.id, "utterances": [{"tokens": list(u.tokens), "raw": u.raw} for u in d.utterances]}
            for d in dialogues
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_pair_cache(path: str) -> tuple[Vocab, list[Dialogue]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CACHE_FORMAT or doc.get("version") != CACHE_VERSION:
        raise DataError(f"{path}: not a version-{CACHE_VERSION} {CACHE_FORMAT} file")
    vocab = Vocab(doc["vocab"])
    dialogues = [
        Dialogue(
            id=d["id"],
            utterances=tuple(Utterance(tuple(u["tokens"]), u["raw"]) for u in d["utterances"]),
        )
        for d in doc["dialogues"]
    ]
    return vocab, dialogues
