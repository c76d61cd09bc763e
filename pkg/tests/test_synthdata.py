import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmam.evaluation import load_gold
from cmam.synthdata import Scenario, TopicSpec, generate, restaurant_toy, write_scenario


def test_single_topic_without_fillers():
    sc = Scenario((TopicSpec("Food", ("pasta", "soup", "bread")),), (), (1.0,), n_sentences=50)
    texts, gold = generate(sc, seed=3)
    for text, ex in zip(texts, gold):
        assert ex.pairs == (("Food", tuple(text.split())),)
        assert 6 <= len(text.split()) <= 12


def test_forced_single_topic_has_no_multi_label_examples():
    texts, gold = generate(restaurant_toy(n_sentences=2000, mix=(1.0,)), seed=1)
    assert all(len(ex.pairs) == 1 for ex in gold)


def test_mean_topics_per_sentence():
    _, gold = generate(restaurant_toy(), seed=0)
    mean = np.mean([len(ex.pairs) for ex in gold])
    assert abs(mean - 1.3) <= 0.02


def test_restaurant_toy_shape():
    sc = restaurant_toy()
    assert [t.name for t in sc.topics] == ["Food", "Staff", "Ambience"]
    assert all(len(t.core_tokens) == 30 for t in sc.topics)
    assert len(sc.filler_tokens) == 500 and sc.n_sentences == 10_000


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n_topics=st.integers(1, 4), n_fill=st.integers(0, 20),
       two=st.floats(0, 1))
def test_gold_terms_come_from_sentence(seed, n_topics, n_fill, two):
    topics = tuple(TopicSpec(f"T{i}", tuple(f"c{i}_{j}" for j in range(5))) for i in range(n_topics))
    sc = Scenario(topics, tuple(f"f{j}" for j in range(n_fill)), (1 - two, two), n_sentences=40)
    texts, gold = generate(sc, seed)
    owner = {tok: t.name for t in topics for tok in t.core_tokens}
    for text, ex in zip(texts, gold):
        toks = text.split()
        assert {lab for lab, _ in ex.pairs} == {owner[t] for t in toks if t in owner}
        for lab, term in ex.pairs:
            assert term and all(t in toks and owner[t] == lab for t in term)


def test_deterministic_per_seed():
    sc = restaurant_toy(n_sentences=300)
    assert generate(sc, 5) == generate(sc, 5)
    assert generate(sc, 5)[0] != generate(sc, 6)[0]


def test_rejects_bad_specs():
    with pytest.raises(ValueError):
        generate(Scenario((), ("a",)))
    shared = (TopicSpec("A", ("x", "y")), TopicSpec("B", ("y", "z")))
    with pytest.raises(ValueError, match="shared"):
        generate(Scenario(shared, ()))
    with pytest.raises(ValueError):
        generate(Scenario((TopicSpec("A", ("x",)),), (), mix=(-1.0, 2.0)))


def test_write_scenario(tmp_path):
    sc = restaurant_toy(n_sentences=100)
    write_scenario(sc, 0, tmp_path / "c.txt", tmp_path / "g.jsonl", tmp_path / "t.json")
    lines = (tmp_path / "c.txt").read_text().splitlines()
    gold = load_gold(tmp_path / "g.jsonl")
    assert len(lines) == len(gold) == 100
    assert [g.text for g in gold] == lines
    topics = json.loads((tmp_path / "t.json").read_text())
    cores = [set(v) for v in topics.values()]
    assert all(not (a & b) for i, a in enumerate(cores) for b in cores[i + 1:])
