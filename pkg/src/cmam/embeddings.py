"""Skip-gram word vectors, word2vec text I/O, and k-means aspect initialisation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from ._accel import BACKEND
from .corpus import UNK_ID, EmptyCorpusError, EncodedSentence, Vocabulary

log = logging.getLogger(__name__)


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingMatrix:
    values: np.ndarray
    n_missing: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("embedding matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# skip-gram with negative sampling
# ---------------------------------------------------------------------------


def context_pairs(ids: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) id pairs within ``window`` positions, skipping unknowns.

    Pairs come out center-major in sentence order.
    """
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.shape[0]
    pos = np.arange(n)
    offset = pos[None, :] - pos[:, None]
    mask = (np.abs(offset) <= window) & (offset != 0)
    mask &= (ids[:, None] != UNK_ID) & (ids[None, :] != UNK_ID)
    ci, oi = np.nonzero(mask)
    return ids[ci], ids[oi]


class UnigramSampler:
    """Draws ids with probability proportional to count**power (unknown id excluded)."""

    def __init__(self, counts: np.ndarray, power: float = 0.75):
        weights = np.asarray(counts, dtype=np.float64) ** power
        weights[UNK_ID] = 0.0
        total = weights.sum()
        if total <= 0:
            raise EmptyCorpusError("no in-vocabulary tokens to sample negatives from")
        self.probs = weights / total
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        u = rng.random(size)
        return np.searchsorted(self._cdf, u, side="right").astype(np.int64)


def train_skipgram(
    sentences: Sequence[EncodedSentence] | Sequence[np.ndarray],
    vocab: Vocabulary,
    dim: int = 200,
    window: int = 10,
    negatives: int = 20,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    fast: bool = False,
    chunk_sentences: int = 2000,
) -> EmbeddingMatrix:
    """Train input vectors with SGNS, learning rate decaying linearly to ~0.

    Negatives for every (center, context) pair are drawn up front from the
    unigram^0.75 distribution, so the numba and numpy kernels see the same
    inputs.  ``fast`` switches to lock-free parallel updates (non-reproducible).
    """
    seqs = [np.asarray(getattr(s, "ids", s), dtype=np.int64) for s in sentences]
    if not seqs:
        raise EmptyCorpusError("empty corpus")
    rng = np.random.default_rng(seed)
    V = vocab.size
    sampler = UnigramSampler(vocab.freq)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))

    per_epoch = sum(int(context_pairs(s, window)[0].shape[0]) for s in seqs)
    if per_epoch == 0:
        raise EmptyCorpusError("corpus yields no training pairs")
    total = per_epoch * epochs
    step_fn = kernels.sgns_pairs
    if fast and BACKEND == "numba":
        step_fn = kernels.sgns_pairs_hogwild_nb

    done = 0
    for epoch in range(epochs):
        for lo in range(0, len(seqs), chunk_sentences):
            pairs = [context_pairs(s, window) for s in seqs[lo : lo + chunk_sentences]]
            centers = np.concatenate([p[0] for p in pairs])
            contexts = np.concatenate([p[1] for p in pairs])
            m = centers.shape[0]
            if m == 0:
                continue
            negs = sampler.draw(rng, (m, negatives))
            progress = (done + np.arange(m)) / total
            lrs = lr * np.maximum(1e-4, 1.0 - progress)
            step_fn(w_in, w_out, centers, contexts, negs, lrs)
            done += m
        log.info("skip-gram epoch %d/%d done (%d pairs)", epoch + 1, epochs, per_epoch)
    return EmbeddingMatrix(w_in)


# ---------------------------------------------------------------------------
# word2vec text format
# ---------------------------------------------------------------------------


def save_embeddings(E: EmbeddingMatrix, vocab: Vocabulary, path: str | Path) -> None:
    if len(E) != vocab.size:
        raise ValueError("embedding rows do not match vocabulary size")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(E)} {E.dim}\n")
        for tok, row in zip(vocab.id_to_token, E.values.tolist()):
            fh.write(tok + " " + " ".join(map(repr, row)) + "\n")


def load_embeddings(path: str | Path, vocab: Vocabulary, seed: int = 0) -> EmbeddingMatrix:
    """Read word2vec text vectors and align them with ``vocab`` ids.

    Vocabulary tokens absent from the file get uniform [-0.05, 0.05] rows
    drawn from ``seed``; their number is stored in ``n_missing``.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            n_rows, dim = int(header[0]), int(header[1])
            if len(header) != 2 or dim < 1:
                raise ValueError
        except (ValueError, IndexError):
            raise EmbeddingFormatError(f"{path}: malformed header {' '.join(header)!r}") from None
        values = np.full((vocab.size, dim), np.nan)
        seen = np.zeros(vocab.size, dtype=bool)
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            idx = vocab.token_to_id.get(parts[0])
            if idx is None:
                continue
            values[idx] = [float(x) for x in parts[1:]]
            seen[idx] = True
    missing = ~seen
    n_missing = int(missing.sum())
    if n_missing:
        rng = np.random.default_rng(seed)
        values[missing] = rng.uniform(-0.05, 0.05, size=(n_missing, dim))
        log.info("%s: %d vocabulary tokens missing, randomly initialised", path, n_missing)
    return EmbeddingMatrix(values, n_missing=n_missing)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


@dataclass
class AspectInit:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    history: list[float]
    n_iter: int
    reseeds: int = 0


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    C = np.empty((K, X.shape[1]))
    C[0] = X[rng.integers(n)]
    d2 = ((X - C[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        C[k] = X[idx]
        d2 = np.minimum(d2, ((X - C[k]) ** 2).sum(axis=1))
    return C


def kmeans(points: np.ndarray, K: int = 30, max_iters: int = 100, seed: int = 0) -> AspectInit:
    """Lloyd's algorithm from k-means++ seeds, squared Euclidean distance.

    An empty cluster takes the point farthest from its current centroid
    (among clusters that can spare one).  Inertia is checked to be
    non-increasing at every iteration.
    """
    X = np.ascontiguousarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < K:
        raise ValueError(f"need at least K={K} points, got {n}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, K, rng)
    history: list[float] = []
    prev_assign = None
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    reseeds = 0
    for it in range(1, max_iters + 1):
        labels, dist = kernels.assign(X, C)
        inertia = float(dist.sum())
        if history and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise RuntimeError(f"k-means inertia increased at iteration {it}: {history[-1]} -> {inertia}")
        history.append(inertia)
        if prev_assign is not None and np.array_equal(labels, prev_assign):
            break
        prev_assign = labels.copy()
        sizes = np.bincount(labels, minlength=K)
        for k in np.flatnonzero(sizes == 0):
            movable = sizes[labels] > 1
            cand = np.where(movable, dist, -1.0)
            idx = int(np.argmax(cand))
            sizes[labels[idx]] -= 1
            labels[idx] = k
            sizes[k] = 1
            dist[idx] = 0.0
            C[k] = X[idx]
            reseeds += 1
        for k in range(K):
            C[k] = X[labels == k].mean(axis=0)
        inertia = float(((X - C[labels]) ** 2).sum())
        if inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise RuntimeError(f"k-means inertia increased in update {it}")
        history.append(inertia)
    final = float(((X - C[labels]) ** 2).sum())
    return AspectInit(C, labels, final, history, it, reseeds)


def init_aspects(E: EmbeddingMatrix, K: int = 30, seed: int = 0, max_iters: int = 100) -> np.ndarray:
    """K-means centroids of the word vectors (unknown row excluded), rows L2-normalised."""
    result = kmeans(E.values[1:], K, max_iters=max_iters, seed=seed)
    C = result.centroids
    norms = np.linalg.norm(C, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise FloatingPointError("k-means produced a zero centroid; cannot normalise")
    return C / norms
