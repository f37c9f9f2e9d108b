"""Corpus ingestion, vocabularies, one-hot encoding and the length curriculum."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNK, BOS, EOS, PAD = "<unk>", "<s>", "</s>", "<pad>"
RESERVED = (UNK, BOS, EOS, PAD)


@dataclass(frozen=True)
class Vocabulary:
    """Token list whose first entries are the reserved tokens."""

    tokens: tuple[str, ...]
    level: str = "word"

    def __post_init__(self):
        if self.tokens[:len(RESERVED)] != RESERVED:
            raise ValueError("reserved tokens must occupy the lowest indices")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    @property
    def unk_index(self) -> int:
        return 0

    @property
    def pad_index(self) -> int:
        return RESERVED.index(PAD)

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._index.get(t, 0) for t in tokens]

    def decode(self, indices: Iterable[int], strip_pad: bool = True) -> list[str]:
        out = [self.tokens[int(i)] for i in indices]
        if strip_pad:
            out = [t for t in out if t != PAD]
        return out

    def join(self, tokens: Sequence[str]) -> str:
        return ("" if self.level == "character" else " ").join(tokens)


def tokenize(line: str, level: str = "word") -> list[str]:
    if level == "word":
        return line.split()
    if level == "character":
        return list(line.rstrip("\n"))
    raise ValueError(f"unknown tokenization level {level!r}")


def build_vocab(corpus: Iterable[Sequence[str] | str], top_k: int, level: str = "word") -> Vocabulary:
    """Keep the ``top_k`` most frequent tokens, ties broken lexicographically."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    counts: Counter = Counter()
    n = 0
    for sent in corpus:
        toks = tokenize(sent, level) if isinstance(sent, str) else sent
        counts.update(t for t in toks if t not in RESERVED)
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], t))[:top_k]
    return Vocabulary(RESERVED + tuple(ranked), level)


def one_hot(indices: Sequence[int], k: int, n: int, pad_index: int | None = None) -> np.ndarray:
    """(n, k) indicator matrix; rows past the sentence use ``pad_index``."""
    if n <= 0:
        raise ValueError("sequence length must be positive")
    idx = list(indices)[:n]
    if len(idx) < n:
        if pad_index is None:
            raise ValueError(f"sentence of length {len(idx)} is shorter than {n} and no pad index was given")
        idx += [pad_index] * (n - len(idx))
    out = np.zeros((n, k))
    out[np.arange(n), idx] = 1.0
    return out


def encode_one_hot(sentence: Sequence[str], vocab: Vocabulary, n: int) -> np.ndarray:
    """Truncate or pad ``sentence`` to ``n`` tokens and one-hot encode it."""
    return one_hot(vocab.encode(sentence), len(vocab), n, vocab.pad_index)


def encode_batch(sentences: Sequence[Sequence[int]], k: int, n: int, pad_index: int) -> np.ndarray:
    out = np.zeros((len(sentences), n, k))
    for b, idx in enumerate(sentences):
        row = list(idx)[:n]
        row += [pad_index] * (n - len(row))
        out[b, np.arange(n), row] = 1.0
    return out


def decode_one_hot(matrix: np.ndarray, vocab: Vocabulary) -> list[str]:
    return vocab.decode(np.argmax(matrix, axis=-1))


def read_corpus(path: str | Path, level: str = "word") -> list[list[str]]:
    """One sentence per line, UTF-8; blank lines are skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [tokenize(l, level) for l in lines if l.strip()]


@dataclass
class LabeledCorpus:
    sentences: list[list[str]]
    labels: list[int] | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.sentences):
            raise ValueError("labels must cover every sentence")


def label_attribute(corpus: Sequence[Sequence[str]], rule: str = "question",
                    labels_path: str | Path | None = None) -> LabeledCorpus:
    """Attach a binary attribute: ``question`` marks sentences containing a
    ``?`` token; ``sentiment-file`` reads one 0/1 label per line."""
    sents = [list(s) for s in corpus]
    if rule == "question":
        return LabeledCorpus(sents, [int("?" in s) for s in sents])
    if rule == "sentiment-file":
        if labels_path is None:
            raise ValueError("sentiment-file labelling needs a labels file")
        rows = [l.strip() for l in Path(labels_path).read_text(encoding="utf-8").splitlines() if l.strip()]
        if len(rows) != len(sents):
            raise ValueError(f"label file has {len(rows)} rows but the corpus has {len(sents)} sentences")
        bad = [r for r in rows if r not in ("0", "1")]
        if bad:
            raise ValueError(f"labels must be 0 or 1, got {bad[0]!r}")
        return LabeledCorpus(sents, [int(r) for r in rows])
    raise ValueError(f"unknown labelling rule {rule!r}")


# word-level runs start at 5 tokens, character-level at 13
START_LENGTH = {"word": 5, "character": 13}


@dataclass(frozen=True)
class CurriculumState:
    start: int
    epochs_per_increment: int
    max_length: int
    current: int = field(default=0)

    def __post_init__(self):
        if self.start < 1 or self.epochs_per_increment < 1 or self.max_length < self.start:
            raise ValueError("invalid curriculum parameters")
        if self.current == 0:
            object.__setattr__(self, "current", self.start)


def curriculum_advance(state: CurriculumState, epoch: int) -> CurriculumState:
    """Length at ``epoch``: min(max, start + epoch // epochs_per_increment)."""
    length = min(state.max_length, state.start + epoch // state.epochs_per_increment)
    return replace(state, current=max(state.current, length))
