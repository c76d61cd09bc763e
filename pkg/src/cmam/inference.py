"""Quantile-threshold selection of aspects and their terms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .corpus import UNK_ID
from .model import CmamParams, forward


@dataclass(frozen=True)
class InferenceConfig:
    q_as: float = 0.9
    n_as: int = 2
    q_at: float = 0.9
    n_at: int = 3

    def __post_init__(self):
        if not (0.0 <= self.q_as <= 1.0 and 0.0 <= self.q_at <= 1.0):
            raise ValueError("quantiles must lie in [0, 1]")
        if self.n_as < 1 or self.n_at < 1:
            raise ValueError("n_as and n_at must be >= 1")


def quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile: position q*(n-1) in the ascending order."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("quantile of an empty sequence")
    h = q * (v.size - 1)
    lo, hi = math.floor(h), math.ceil(h)
    return float(v[lo] + (h - lo) * (v[hi] - v[lo]))


def _above_threshold(values: np.ndarray, q: float, limit: int) -> np.ndarray:
    """Indices strictly above the q-quantile, best ``limit`` by value (ties: lower index)."""
    thr = quantile(values, q)
    cand = np.flatnonzero(values > thr)
    order = np.argsort(-values[cand], kind="stable")
    return cand[order[:limit]]


def select_aspects(p: np.ndarray, cfg: InferenceConfig) -> list[tuple[int, float]]:
    p = np.asarray(p, dtype=np.float64)
    return [(int(k), float(p[k])) for k in _above_threshold(p, cfg.q_as, cfg.n_as)]


def select_terms(A_column: np.ndarray, tokens: Sequence[str], cfg: InferenceConfig) -> list[tuple[int, str, float]]:
    """Same rule as for aspects, applied to one attention column; result in sentence order."""
    col = np.asarray(A_column, dtype=np.float64)
    keep = np.sort(_above_threshold(col, cfg.q_at, cfg.n_at))
    return [(int(i), tokens[i], float(col[i])) for i in keep]


class Term(NamedTuple):
    pos: int
    token: str
    weight: float
    oov: bool = False


@dataclass
class Prediction:
    aspects: list[tuple[int, float]]
    terms: dict[int, list[Term]] = field(default_factory=dict)

    def to_json(self, sentence: str, labels: Mapping[int, str] | None = None) -> dict:
        return {
            "sentence": sentence,
            "aspects": [
                {
                    "id": k,
                    "label": labels.get(k) if labels else None,
                    "weight": w,
                    "terms": [{"pos": t.pos, "token": t.token, "weight": t.weight, "oov": t.oov}
                              for t in self.terms.get(k, [])],
                }
                for k, w in self.aspects
            ],
        }


def predict(sentence, E, params: CmamParams, cfg: InferenceConfig = InferenceConfig()) -> Prediction:
    """Aspects above the probability quantile, then terms above each aspect's attention quantile.

    Terms at unknown-token positions are kept and flagged ``oov``.
    """
    ids = np.asarray(sentence.ids)
    if ids.shape[0] == 0:
        raise ValueError("cannot predict on an empty sentence")
    state = forward(sentence, E, params)
    aspects = select_aspects(state.p, cfg)
    terms = {}
    for k, _ in aspects:
        picked = select_terms(state.A[:, k], sentence.raw_tokens, cfg)
        terms[k] = [Term(i, tok, w, bool(ids[i] == UNK_ID)) for i, tok, w in picked]
    return Prediction(aspects, terms)
