"""Tokenization, vocabulary construction and sentence encoding."""
from __future__ import annotations

import hashlib
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

UNKNOWN = "unknown"
UNK_ID = 0

# A compact English stop-word list (function words only; no sentiment words).
ENGLISH_STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can cannot could did do does doing down
    during each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself no nor
    not of off on once only or other our ours ourselves out over own same she should
    so some such than that the their theirs them themselves then there these they
    this those through to too under until up very was we were what when where which
    while who whom why will with would you your yours yourself yourselves s t d ll m
    o re ve y isn aren wasn weren hasn haven hadn doesn don didn won wouldn shan
    shouldn couldn mustn needn also us
    """.split()
)


class EmptyCorpusError(ValueError):
    """Raised when there is nothing to train on."""


def _is_strip_char(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat[0] == "P" or cat[0] == "S"


def tokenize(text: str, stopwords: Iterable[str] = ENGLISH_STOPWORDS, drop_numerals: bool = False) -> list[str]:
    """Lowercase, split on whitespace and punctuation, and drop stop words.

    Punctuation and symbol characters (Unicode categories P* and S*) never
    survive inside a token: leading/trailing ones are stripped and inner ones
    split the word.
    """
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else frozenset(stopwords)
    cleaned = "".join(" " if _is_strip_char(ch) else ch for ch in text.lower())
    out = []
    for tok in cleaned.split():
        if tok in stop:
            continue
        if drop_numerals and tok.isnumeric():
            continue
        out.append(tok)
    return out


def load_stopwords(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


@dataclass(frozen=True, eq=False)
class Vocabulary:
    id_to_token: tuple[str, ...]
    freq: np.ndarray
    token_to_id: dict[str, int] = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.id_to_token[0] != UNKNOWN:
            raise ValueError(f"id 0 must be {UNKNOWN!r}")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)
        self.freq.setflags(write=False)

    unk_id = UNK_ID

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.id_to_token == other.id_to_token and np.array_equal(self.freq, other.freq)

    __hash__ = None  # type: ignore[assignment]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def get(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def coverage(self) -> float:
        """Fraction of counted corpus tokens that are in-vocabulary."""
        total = float(self.freq.sum())
        return 0.0 if total == 0 else 1.0 - float(self.freq[UNK_ID]) / total

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{tok}\t{i}\t{int(self.freq[i])}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3 or int(parts[1]) != lineno:
                    raise ValueError(f"{path}:{lineno + 1}: expected 'token<TAB>{lineno}<TAB>count'")
                tokens.append(parts[0])
                counts.append(int(parts[2]))
        if not tokens:
            raise ValueError(f"{path}: empty vocabulary file")
        return cls(tuple(tokens), np.asarray(counts, dtype=np.int64))


def build_vocabulary(corpus: Iterable[Sequence[str]], max_vocab: int = 9000, min_count: int = 2) -> Vocabulary:
    """Keep the ``max_vocab - 1`` most frequent tokens seen at least ``min_count`` times.

    Ids are assigned by descending count, ties broken lexicographically; id 0 is
    the reserved unknown token whose count is the number of dropped occurrences.
    """
    if max_vocab < 1:
        raise ValueError("max_vocab must be >= 1")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    if not counts:
        raise EmptyCorpusError("corpus contains no tokens; nothing to train on")
    ranked = sorted((kv for kv in counts.items() if kv[1] >= min_count and kv[0] != UNKNOWN), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[: max_vocab - 1]
    total = sum(counts.values())
    in_vocab = sum(c for _, c in kept)
    tokens = (UNKNOWN,) + tuple(t for t, _ in kept)
    freq = np.asarray([total - in_vocab] + [c for _, c in kept], dtype=np.int64)
    return Vocabulary(tokens, freq)


@dataclass(frozen=True)
class EncodedSentence:
    ids: np.ndarray
    raw_tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.raw_tokens):
            raise ValueError("ids and raw_tokens differ in length")

    def __len__(self) -> int:
        return len(self.raw_tokens)


def encode(tokens: Sequence[str], vocab: Vocabulary) -> EncodedSentence:
    ids = np.fromiter((vocab.get(t) for t in tokens), dtype=np.int64, count=len(tokens))
    return EncodedSentence(ids, tuple(tokens))


@dataclass
class LoadStats:
    lines: int = 0
    kept: int = 0
    too_short: int = 0
    bad_utf8: int = 0


def iter_lines(path: str | Path, stats: LoadStats | None = None) -> Iterator[str]:
    """Yield decoded non-empty lines; undecodable lines are skipped and counted."""
    stats = stats if stats is not None else LoadStats()
    with open(path, "rb") as fh:
        for raw in fh:
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                stats.bad_utf8 += 1
                continue
            if line:
                stats.lines += 1
                yield line


def load_corpus(
    path: str | Path,
    vocab: Vocabulary,
    stopwords: Iterable[str] = ENGLISH_STOPWORDS,
    min_len: int = 2,
    stats: LoadStats | None = None,
    drop_numerals: bool = False,
) -> Iterator[EncodedSentence]:
    """Stream one EncodedSentence per usable line of a sentence-per-line file."""
    stats = stats if stats is not None else LoadStats()
    stop = frozenset(stopwords)
    for line in iter_lines(path, stats):
        tokens = tokenize(line, stop, drop_numerals)
        if len(tokens) < min_len:
            stats.too_short += 1
            continue
        stats.kept += 1
        yield encode(tokens, vocab)
    if stats.too_short or stats.bad_utf8:
        log.info("%s: kept %d sentences, dropped %d short, skipped %d invalid UTF-8",
                 path, stats.kept, stats.too_short, stats.bad_utf8)


def read_token_lines(path: str | Path, stopwords: Iterable[str] = ENGLISH_STOPWORDS,
                     drop_numerals: bool = False) -> list[list[str]]:
    stop = frozenset(stopwords)
    return [tokenize(line, stop, drop_numerals) for line in iter_lines(path)]
