"""Aspect-to-label mapping and P/R/F1 scoring of aspects and (aspect, term) pairs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import ENGLISH_STOPWORDS, UNK_ID, Vocabulary, tokenize

OMITTED = "omitted"
# gold categories left out of scoring, compared case-insensitively
OMITTED_LABELS = frozenset({"omitted", "prices", "price", "location", "restaurant", "misc", "misc."})
MULTI = "Multi-labels"
DEFAULT_LABELS = ("Ambience", "Food", "Staff")


def is_omitted(label: str) -> bool:
    return label.strip().lower() in OMITTED_LABELS


@dataclass(frozen=True)
class LabeledExample:
    text: str
    pairs: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError(f"example {self.text!r} has no gold pairs")

    @property
    def labels(self) -> set[str]:
        return {label for label, _ in self.pairs}


@dataclass(frozen=True)
class PredictedAspect:
    aspect_id: int
    weight: float
    terms: tuple[str, ...] = ()


def load_gold(path: str | Path, stopwords: Iterable[str] = ENGLISH_STOPWORDS) -> list[LabeledExample]:
    stop = frozenset(stopwords)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                pairs = tuple((p["label"], tuple(tokenize(p["term"], stop))) for p in rec["pairs"])
                out.append(LabeledExample(rec["text"], pairs))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad gold record ({exc})") from None
    return out


def save_gold(examples: Iterable[LabeledExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            rec = {"text": ex.text, "pairs": [{"label": lab, "term": " ".join(toks)} for lab, toks in ex.pairs]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_predictions(path: str | Path) -> list[tuple[str, list[PredictedAspect]]]:
    """Read prediction JSON-lines; terms flagged ``oov`` are dropped (they can never match)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            aspects = [
                PredictedAspect(int(a["id"]), float(a["weight"]),
                                tuple(t["token"] for t in a.get("terms", []) if not t.get("oov", False)))
                for a in rec["aspects"]
            ]
            out.append((rec["sentence"], aspects))
    return out


# ---------------------------------------------------------------------------
# mapping
# ---------------------------------------------------------------------------


@dataclass
class GoldMapping:
    aspect_to_label: dict[int, str]
    words: dict[int, list[str]] = field(default_factory=dict)

    def validate(self, K: int) -> None:
        if sorted(self.aspect_to_label) != list(range(K)):
            raise ValueError(f"mapping must list every aspect id 0..{K - 1} exactly once")

    def __getitem__(self, aspect_id: int) -> str:
        try:
            return self.aspect_to_label[aspect_id]
        except KeyError:
            raise ValueError(f"aspect {aspect_id} is not in the mapping") from None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for k in sorted(self.aspect_to_label):
                fh.write(f"{k}\t{self.aspect_to_label[k]}\t{' '.join(self.words.get(k, []))}\n")

    @classmethod
    def load(cls, path: str | Path) -> "GoldMapping":
        labels, words = {}, {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) < 2:
                    raise ValueError(f"{path}:{lineno}: expected 'aspect_id<TAB>label<TAB>words'")
                k = int(parts[0])
                if k in labels:
                    raise ValueError(f"{path}:{lineno}: aspect {k} listed twice")
                if parts[1] in ("", "?"):
                    raise ValueError(f"{path}:{lineno}: aspect {k} has no label yet")
                labels[k] = parts[1]
                words[k] = parts[2].split() if len(parts) > 2 else []
        mapping = cls(labels, words)
        mapping.validate(len(labels))
        return mapping


def representative_words(aspect_id: int, aem: np.ndarray, E, vocab: Vocabulary, top_n: int = 10) -> list[str]:
    """Vocabulary tokens closest to an aspect row by cosine similarity ("unknown" excluded)."""
    Ev = np.asarray(getattr(E, "values", E))
    row = aem[aspect_id]
    norms = np.linalg.norm(Ev, axis=1) * np.linalg.norm(row)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, Ev @ row / norms, 0.0)
    sims[UNK_ID] = -np.inf
    order = np.argsort(-sims, kind="stable")[: min(top_n, vocab.size - 1)]
    return [vocab.id_to_token[i] for i in order]


def draft_mapping(aem: np.ndarray, E, vocab: Vocabulary, top_n: int = 10) -> GoldMapping:
    """Mapping skeleton for a human: every aspect labelled '?' with its nearest words."""
    K = aem.shape[0]
    words = {k: representative_words(k, aem, E, vocab, top_n) for k in range(K)}
    return GoldMapping({k: "?" for k in range(K)}, words)


def auto_mapping(aem: np.ndarray, E, vocab: Vocabulary, topics: Mapping[str, Iterable[str]],
                 top_n: int = 10) -> GoldMapping:
    """Label each aspect with the topic whose core tokens overlap its top words most.

    No overlap means "omitted"; ties go to the topic listed first.
    """
    core = {name: set(toks) for name, toks in topics.items()}
    labels, words = {}, {}
    for k in range(aem.shape[0]):
        top = representative_words(k, aem, E, vocab, top_n)
        best, best_n = OMITTED, 0
        for name, toks in core.items():
            n = sum(t in toks for t in top)
            if n > best_n:
                best, best_n = name, n
        labels[k] = best
        words[k] = top
    return GoldMapping(labels, words)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


@dataclass
class Score:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "Score") -> "Score":
        return Score(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _scored_labels(gold: Sequence[LabeledExample], mapping: GoldMapping, labels) -> set[str]:
    if labels is not None:
        return set(labels)
    found = {lab for ex in gold for lab in ex.labels} | set(mapping.aspect_to_label.values())
    return {lab for lab in found if not is_omitted(lab)}


def _check_lengths(predictions, gold):
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions for {len(gold)} gold examples")


def score_aspects(predictions: Sequence[Sequence[PredictedAspect]], gold: Sequence[LabeledExample],
                  mapping: GoldMapping, labels: Iterable[str] | None = None) -> dict[str, Score]:
    """Per-sentence, per-label counting of predicted aspect labels against gold labels."""
    _check_lengths(predictions, gold)
    scored = _scored_labels(gold, mapping, labels)
    scores = {lab: Score() for lab in sorted(scored)}
    for preds, ex in zip(predictions, gold):
        g = ex.labels & scored
        if not g:
            continue
        p = {mapping[a.aspect_id] for a in preds} & scored
        for lab in p & g:
            scores[lab].tp += 1
        for lab in p - g:
            scores[lab].fp += 1
        for lab in g - p:
            scores[lab].fn += 1
    return scores


def score_pairs(predictions: Sequence[Sequence[PredictedAspect]], gold: Sequence[LabeledExample],
                mapping: GoldMapping, labels: Iterable[str] | None = None) -> dict[str, Score]:
    """F1 bookkeeping for (aspect label, term) pairs under the partial-match rule.

    Examples with more than one scored gold pair form the "Multi-labels"
    category.  Predictions claim gold pairs greedily by descending aspect
    weight, one gold pair each; exact duplicate predictions count once.
    The returned dict also carries the pooled "micro" score.
    """
    _check_lengths(predictions, gold)
    scored = _scored_labels(gold, mapping, labels)
    scores = {lab: Score() for lab in sorted(scored)}
    scores[MULTI] = Score()
    for preds, ex in zip(predictions, gold):
        gpairs = [(lab, set(toks)) for lab, toks in ex.pairs if lab in scored]
        if not gpairs:
            continue
        multi = len(gpairs) > 1
        seen = set()
        uniq = []
        for a in sorted(preds, key=lambda a: -a.weight):
            key = (a.aspect_id, a.terms)
            label = mapping[a.aspect_id]
            if key in seen or label not in scored:
                continue
            seen.add(key)
            uniq.append((label, set(a.terms)))
        matched = [False] * len(gpairs)
        for label, toks in uniq:
            hit = next((i for i, (gl, gt) in enumerate(gpairs)
                        if not matched[i] and gl == label and toks & gt), None)
            cat = MULTI if multi else label
            if hit is None:
                scores[cat].fp += 1
            else:
                matched[hit] = True
                scores[cat].tp += 1
        for (gl, _), m in zip(gpairs, matched):
            if not m:
                scores[MULTI if multi else gl].fn += 1
    micro = Score()
    for s in scores.values():
        micro = micro + s
    scores["micro"] = micro
    return scores


def align(predictions: Sequence[tuple[str, list[PredictedAspect]]], gold: Sequence[LabeledExample]):
    """Pair prediction records with gold examples line by line, checking the text agrees."""
    _check_lengths(predictions, gold)
    for i, ((sent, _), ex) in enumerate(zip(predictions, gold)):
        if sent.strip() != ex.text.strip():
            raise ValueError(f"line {i + 1}: prediction sentence does not match gold text")
    return [p for _, p in predictions]


def format_report(aspect_scores: Mapping[str, Score], pair_scores: Mapping[str, Score]) -> str:
    lines = ["Aspect extraction", f"{'label':<14}{'P':>8}{'R':>8}{'F1':>8}{'TP':>7}{'FP':>7}{'FN':>7}"]
    for lab, s in aspect_scores.items():
        lines.append(f"{lab:<14}{s.precision:8.3f}{s.recall:8.3f}{s.f1:8.3f}{s.tp:7d}{s.fp:7d}{s.fn:7d}")
    lines += ["", "Aspect + term pairs", f"{'category':<14}{'F1':>8}{'TP':>7}{'FP':>7}{'FN':>7}"]
    for lab, s in pair_scores.items():
        name = "Micro-average" if lab == "micro" else lab
        lines.append(f"{name:<14}{s.f1:8.3f}{s.tp:7d}{s.fp:7d}{s.fn:7d}")
    return "\n".join(lines) + "\n"


def report_json(aspect_scores: Mapping[str, Score], pair_scores: Mapping[str, Score]) -> dict:
    return {
        "aspects": {k: v.as_dict() for k, v in aspect_scores.items()},
        "pairs": {k: v.as_dict() for k, v in pair_scores.items()},
    }
