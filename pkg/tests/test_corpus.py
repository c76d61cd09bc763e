import string

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cmam.corpus import (
    UNK_ID,
    UNKNOWN,
    EmptyCorpusError,
    LoadStats,
    Vocabulary,
    build_vocabulary,
    encode,
    load_corpus,
    tokenize,
)


def test_tokenize_examples():
    assert tokenize("Best Pastrami I ever had", {"i", "had"}) == ["best", "pastrami", "ever"]
    assert tokenize("") == []
    assert tokenize("GREAT, great; GrEaT!!!", set()) == ["great", "great", "great"]


def test_tokenize_splits_inner_punctuation_and_keeps_numerals():
    assert tokenize("half-price 2 beers", set()) == ["half", "price", "2", "beers"]
    assert tokenize("half-price 2 beers", set(), drop_numerals=True) == ["half", "price", "beers"]


@given(st.text())
def test_tokens_contain_no_space_or_punctuation(text):
    for tok in tokenize(text, set()):
        assert tok
        assert not any(ch.isspace() for ch in tok)
        assert not any(ch in string.punctuation for ch in tok)


def _corpus(counts):
    return [[tok] * c for tok, c in counts.items()]


def test_build_vocabulary_examples():
    v = build_vocabulary(_corpus({"a": 5, "b": 3, "c": 1}), max_vocab=3, min_count=1)
    assert v.token_to_id == {UNKNOWN: 0, "a": 1, "b": 2}
    assert v.freq.tolist() == [1, 5, 3]
    v = build_vocabulary(_corpus({"a": 5}), max_vocab=10, min_count=1)
    assert v.token_to_id == {UNKNOWN: 0, "a": 1}
    v = build_vocabulary(_corpus({"b": 2, "a": 2}), max_vocab=3, min_count=1)
    assert v.id_to_token == (UNKNOWN, "a", "b")


def test_build_vocabulary_min_count_and_cap():
    v = build_vocabulary(_corpus({"a": 5, "b": 1}), max_vocab=10, min_count=2)
    assert v.id_to_token == (UNKNOWN, "a")
    assert v.coverage() == pytest.approx(5 / 6)
    v = build_vocabulary(_corpus({f"t{i}": i + 1 for i in range(50)}), max_vocab=9, min_count=1)
    assert v.size == 9


def test_build_vocabulary_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        build_vocabulary([[], []])


def test_build_vocabulary_deterministic():
    corpus = [["x", "y", "z", "y"], ["z", "w"]] * 3
    assert build_vocabulary(corpus, 10, 1) == build_vocabulary(list(corpus), 10, 1)


def test_encode_examples():
    v = Vocabulary((UNKNOWN, "a", "b", "c", "d", "e", "f", "pastrami"), np.zeros(8, dtype=np.int64))
    assert encode(["pastrami", "zzz-oov"], v).ids.tolist() == [7, 0]
    assert encode([], v).ids.tolist() == []
    assert encode(["a", "a"], v).ids.tolist() == [1, 1]


@given(st.lists(st.integers(1, 5), max_size=20))
def test_encode_decode_round_trip(ids):
    v = Vocabulary((UNKNOWN, "a", "b", "c", "d", "e"), np.ones(6, dtype=np.int64))
    assert encode(v.decode(ids), v).ids.tolist() == ids


def test_vocabulary_file_round_trip(tmp_path):
    v = build_vocabulary([["b", "a", "a", "c", "c", "c", "rare"]], 10, 2)
    path = tmp_path / "vocab.tsv"
    v.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "unknown\t0\t2"
    assert lines[1] == "c\t1\t3"
    w = Vocabulary.load(path)
    assert w == v and w.digest() == v.digest()


def test_load_corpus_filters_and_counts(tmp_path):
    path = tmp_path / "c.txt"
    path.write_bytes(b"great pastrami here\n\nok\n\xff\xfe bad\nthe food was fine\n")
    v = build_vocabulary([["great", "pastrami", "food", "fine"]], 10, 1)
    stats = LoadStats()
    sents = list(load_corpus(path, v, stats=stats))
    assert [s.raw_tokens for s in sents] == [("great", "pastrami"), ("food", "fine")]
    assert stats.too_short == 1 and stats.bad_utf8 == 1 and stats.kept == 2
    assert all(len(s.ids) == len(s.raw_tokens) for s in sents)


def test_load_corpus_missing_file(tmp_path):
    v = build_vocabulary([["a"]], 10, 1)
    with pytest.raises(OSError, match="nope"):
        list(load_corpus(tmp_path / "nope.txt", v))


def test_unknown_id_is_zero():
    v = build_vocabulary([["a", "a"]], 5, 1)
    assert v.unk_id == UNK_ID == 0 and v.id_to_token[0] == "unknown"
