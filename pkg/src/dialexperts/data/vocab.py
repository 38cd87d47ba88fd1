"""Whitespace tokenizer over a fixed vocabulary."""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable

RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>", "<mask>", "<cls>")
PAD, UNK, BOS, EOS, MASK, CLS = range(len(RESERVED))

_PUNCT = re.compile(r"([.,!?;:'\"()])")


def split_words(text: str) -> list[str]:
    return _PUNCT.sub(r" \1 ", text.lower()).split()


class Vocabulary:
    def __init__(self, words: Iterable[str]):
        tokens = list(RESERVED)
        seen = set(tokens)
        for w in words:
            if w not in seen:
                seen.add(w)
                tokens.append(w)
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @property
    def first_regular(self) -> int:
        return len(RESERVED)

    def encode(self, text: str) -> list[int]:
        return tokenize(text, self)

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS, CLS):
                continue
            words.append(self.tokens[i])
        return detokenize(words)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.tokens, indent=0) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = json.loads(Path(path).read_text(encoding="utf-8"))
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: vocabulary must start with the reserved tokens {RESERVED}")
        return cls(tokens[len(RESERVED):])


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lower-case, detach punctuation, split on whitespace; unknown words map to UNK."""
    return [vocab.id(w) for w in split_words(text)]


def detokenize(words: list[str]) -> str:
    text = " ".join(words)
    return re.sub(r" ([.,!?;:])", r"\1", text)
