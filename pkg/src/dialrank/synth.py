"""Deterministic synthetic dialogue corpora.

Each dialogue starts from a random utterance; every following utterance is
the previous one with all token indices advanced by a fixed cyclic shift.
The next utterance is therefore a deterministic function of its predecessor,
which makes next-utterance ranking fully learnable and gives response
generation a known optimum.
"""

from __future__ import annotations

import json

from .params import rng_stream


def token_word(index: int) -> str:
    return f"w{index:02d}"


def ordered_corpus(
    n_dialogues: int = 500,
    turns: int = 8,
    vocab_words: int = 30,
    utt_len: int = 3,
    shift: int = 7,
    seed: int = 0,
) -> list[list[str]]:
    """Raw dialogues (lists of utterance strings) under the cyclic-shift rule."""
    rng = rng_stream(seed, "synth")
    dialogues = []
    for _ in range(n_dialogues):
        current = rng.integers(0, vocab_words, size=utt_len)
        utterances = []
        for _ in range(turns):
            utterances.append(" ".join(token_word(int(t)) for t in current))
            current = (current + shift) % vocab_words
        dialogues.append(utterances)
    return dialogues


def write_jsonl(dialogues: list[list[str]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dialog in dialogues:
            fh.write(json.dumps({"dialog": dialog}) + "\n")


def split_dialogues(
    dialogues: list[list[str]], n_train: int, n_valid: int
) -> tuple[list[list[str]], list[list[str]], list[list[str]]]:
    train = dialogues[:n_train]
    valid = dialogues[n_train : n_train + n_valid]
    test = dialogues[n_train + n_valid :]
    return train, valid, test
