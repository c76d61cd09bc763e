"""Synthetic review corpora with planted topic vocabularies and gold (aspect, term) pairs."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import LabeledExample, save_gold


@dataclass(frozen=True)
class TopicSpec:
    name: str
    core_tokens: tuple[str, ...]


@dataclass(frozen=True)
class Scenario:
    topics: tuple[TopicSpec, ...]
    filler_tokens: tuple[str, ...]
    # mix[i] = probability that a sentence carries i + 1 topics
    mix: tuple[float, ...] = (0.7, 0.3)
    n_sentences: int = 10_000
    sentence_len: tuple[int, int] = (6, 12)
    cores_per_topic: tuple[int, int] = (1, 3)


def restaurant_toy(n_sentences: int = 10_000, mix: Sequence[float] = (0.7, 0.3),
                   n_core: int = 30, n_filler: int = 500) -> Scenario:
    topics = tuple(
        TopicSpec(name, tuple(f"{name.lower()}{i:02d}" for i in range(n_core)))
        for name in ("Food", "Staff", "Ambience")
    )
    fillers = tuple(f"w{i:03d}" for i in range(n_filler))
    return Scenario(topics, fillers, tuple(mix), n_sentences)


SCENARIOS = {"restaurant-toy": restaurant_toy}


def _check(topics: Sequence[TopicSpec]) -> None:
    if not topics:
        raise ValueError("need at least one topic")
    seen: set[str] = set()
    for t in topics:
        if not t.core_tokens:
            raise ValueError(f"topic {t.name!r} has no core tokens")
        overlap = seen & set(t.core_tokens)
        if overlap:
            raise ValueError(f"core tokens shared between topics: {sorted(overlap)[:5]}")
        seen |= set(t.core_tokens)


def generate(scenario: Scenario, seed: int = 0) -> tuple[list[str], list[LabeledExample]]:
    """Sample sentences and their gold pairs; deterministic for a given seed.

    Each sentence draws its topic count from ``mix``, at least one core token
    per chosen topic, and Zipf(1)-distributed fillers for the remaining slots
    (more core tokens when there is no filler pool).
    """
    topics = scenario.topics
    _check(topics)
    mix = np.asarray(scenario.mix, dtype=np.float64)
    if mix.ndim != 1 or mix.size == 0 or np.any(mix < 0) or mix.sum() <= 0:
        raise ValueError("mix must be a non-empty vector of non-negative weights")
    mix = mix / mix.sum()
    fillers = scenario.filler_tokens
    if fillers:
        zipf = 1.0 / np.arange(1, len(fillers) + 1)
        zipf /= zipf.sum()
    lo, hi = scenario.sentence_len
    cmin, cmax = scenario.cores_per_topic
    rng = np.random.default_rng(seed)

    texts, gold = [], []
    for _ in range(scenario.n_sentences):
        k = min(int(rng.choice(mix.size, p=mix)) + 1, len(topics))
        chosen = np.sort(rng.choice(len(topics), size=k, replace=False))
        length = int(rng.integers(lo, hi + 1))
        slots: list[tuple[str, int]] = []  # (token, topic index or -1)
        for t in chosen:
            core = topics[t].core_tokens
            c = min(int(rng.integers(cmin, cmax + 1)), len(core))
            slots += [(core[i], int(t)) for i in rng.choice(len(core), size=c, replace=False)]
        n_fill = max(0, length - len(slots))
        if fillers:
            slots += [(fillers[i], -1) for i in rng.choice(len(fillers), size=n_fill, p=zipf)]
        else:
            for _ in range(n_fill):
                t = int(chosen[rng.integers(k)])
                core = topics[t].core_tokens
                slots.append((core[int(rng.integers(len(core)))], t))
        slots = [slots[i] for i in rng.permutation(len(slots))]
        texts.append(" ".join(tok for tok, _ in slots))
        pairs = tuple(
            (topics[t].name, tuple(tok for tok, src in slots if src == t)) for t in chosen
        )
        gold.append(LabeledExample(texts[-1], pairs))
    return texts, gold


def write_scenario(scenario: Scenario, seed: int, corpus_path: str | Path, gold_path: str | Path,
                   topics_path: str | Path | None = None) -> None:
    texts, gold = generate(scenario, seed)
    with open(corpus_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(t + "\n" for t in texts)
    save_gold(gold, gold_path)
    if topics_path is not None:
        with open(topics_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({t.name: list(t.core_tokens) for t in scenario.topics}, fh, indent=1)
            fh.write("\n")
