"""Training objective (hinge reconstruction, offset orthogonality, TLAS), Adam, and the loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import CmamParams, ForwardState, Upstream, forward, gradients, save_checkpoint

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    h: float
    u: float
    t: float

    @property
    def total(self) -> float:
        return self.h + self.u + self.t


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.5
    ortho_offset_s: float = 0.3
    negatives_per_sample: int = 20
    tlas_enabled: bool = True
    # multiplies T and its gradient; 0.0 with tlas_enabled reproduces the ablation
    tlas_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or self.ortho_offset_s < 0:
            raise ValueError("lambda and the orthogonality offset must be >= 0")
        if self.negatives_per_sample < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("negatives_per_sample and batch_size must be >= 1, epochs >= 0")


# ---------------------------------------------------------------------------
# loss components: value and gradient w.r.t. their direct inputs
# ---------------------------------------------------------------------------


def hinge_loss(RS: np.ndarray, ts: np.ndarray, negatives: np.ndarray) -> float:
    return hinge_loss_and_grad(RS, ts, negatives)[0]


def hinge_loss_and_grad(RS, ts, negatives):
    """H = sum_i max(0, 1 - RS.ts + RS.n_i) and dH/dRS."""
    negatives = np.atleast_2d(negatives)
    if negatives.shape[0] < 1:
        raise ValueError("need at least one negative")
    margins = 1.0 - RS @ ts + negatives @ RS
    active = margins > 0
    n_act = int(active.sum())
    H = float(margins[active].sum())
    g = negatives[active].sum(axis=0) - n_act * ts
    return H, g


def ortho_loss(aem: np.ndarray, lam: float, s: float) -> float:
    return ortho_loss_and_grad(aem, lam, s)[0]


def ortho_loss_and_grad(aem, lam, s):
    """U = lam * max(0, ||Â Âᵀ - I||_F - s) on row-normalised Â, and dU/daem."""
    norms = np.linalg.norm(aem, axis=1)
    if np.any(norms == 0):
        raise ValueError("aspect embedding matrix has a zero row")
    A_hat = aem / norms[:, None]
    G = A_hat @ A_hat.T - np.eye(aem.shape[0])
    fro = float(np.sqrt((G * G).sum()))
    excess = fro - s
    grad = np.zeros_like(aem)
    if lam == 0 or excess <= 0:
        return 0.0, grad
    g_hat = (2.0 * lam / fro) * (G @ A_hat)
    grad = (g_hat - A_hat * (A_hat * g_hat).sum(axis=1, keepdims=True)) / norms[:, None]
    return lam * excess, grad


def top_two(p: np.ndarray) -> tuple[int, int]:
    order = np.argsort(-p, kind="stable")
    return int(order[0]), int(order[1])


def tlas_loss(state: ForwardState, aem: np.ndarray) -> float:
    return tlas_loss_and_grad(state, aem)[0]


def tlas_loss_and_grad(state, aem):
    """T = max(0, 1 + |AS_j - aem_j| - |AS_j - AS_l|) for the top-2 aspects j, l by p.

    Returns (T, dT/d as_per_aspect, dT/d aem).  Subgradients at kinks are 0.
    """
    K = aem.shape[0]
    if K < 2:
        raise ValueError("TLAS needs at least two aspects")
    j, l = top_two(state.p)
    asp = state.as_per_aspect
    d1 = asp[j] - aem[j]
    d2 = asp[j] - asp[l]
    n1 = math.sqrt(float(d1 @ d1))
    n2 = math.sqrt(float(d2 @ d2))
    value = 1.0 + n1 - n2
    g_asp = np.zeros_like(asp)
    g_aem = np.zeros_like(aem)
    if value <= 0:
        return 0.0, g_asp, g_aem
    if n1 > 0:
        u1 = d1 / n1
        g_asp[j] += u1
        g_aem[j] -= u1
    if n2 > 0:
        u2 = d2 / n2
        g_asp[j] -= u2
        g_asp[l] += u2
    return value, g_asp, g_aem


def sentence_loss_and_grads(state: ForwardState, params: CmamParams, negatives: np.ndarray,
                            cfg: TrainConfig) -> tuple[float, float, CmamParams]:
    """H and T of one sentence with the parameter gradient of H + T (U is per batch)."""
    H, g_rs = hinge_loss_and_grad(state.RS, state.ts, negatives)
    up = Upstream(g_rs, np.zeros_like(state.as_per_aspect), np.zeros_like(params.aem))
    T = 0.0
    if cfg.tlas_enabled:
        T, g_asp, g_aem = tlas_loss_and_grad(state, params.aem)
        T *= cfg.tlas_scale
        up.as_per_aspect += cfg.tlas_scale * g_asp
        up.aem += cfg.tlas_scale * g_aem
    return H, T, gradients(state, params, up)


def total_loss(state: ForwardState, negatives: np.ndarray, aem: np.ndarray, cfg: TrainConfig) -> LossBreakdown:
    H = hinge_loss(state.RS, state.ts, negatives)
    U = ortho_loss(aem, cfg.lam, cfg.ortho_offset_s)
    T = tlas_loss(state, aem) * cfg.tlas_scale if cfg.tlas_enabled else 0.0
    return LossBreakdown(H, U, T)


# ---------------------------------------------------------------------------
# negatives and optimiser
# ---------------------------------------------------------------------------


def sample_negatives(pool: np.ndarray, count: int, rng: np.random.Generator, exclude: int) -> np.ndarray:
    """Mean-embedding rows of ``count`` distinct pool sentences other than ``exclude``."""
    n = pool.shape[0]
    if n - 1 < count:
        raise ValueError(f"negative pool of {n} sentences too small for {count} negatives")
    idx = rng.choice(n - 1, size=count, replace=False)
    idx += idx >= exclude
    return pool[idx]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: CmamParams) -> "AdamState":
        shapes = [a.shape for _, a in params.named_tensors()]
        return cls([np.zeros(s) for s in shapes], [np.zeros(s) for s in shapes])


def adam_step(params: CmamParams, grads: CmamParams, state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    named_g = list(grads.named_tensors())
    for name, g in named_g:
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {name!r}")
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for (_, p), (_, g), m, v in zip(params.named_tensors(), named_g, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: CmamParams
    epoch_losses: list[LossBreakdown]
    batch_log: list[tuple[int, int, float, float, float, float]] = field(default_factory=list)


def _accumulate(acc: CmamParams, g: CmamParams) -> None:
    for (_, a), (_, b) in zip(acc.named_tensors(), g.named_tensors()):
        a += b


def train(
    sentences: Sequence,
    E,
    params: CmamParams,
    cfg: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    vocab_hash: str = "",
) -> TrainResult:
    """Mini-batch Adam over the corpus; ``params`` is updated in place and returned.

    Sentences are reshuffled every epoch with the run seed; each sentence draws
    its own negatives.  The batch loss is the mean of per-sentence H + U + T.
    """
    seqs = [np.asarray(getattr(s, "ids", s), dtype=np.int64) for s in sentences]
    if not seqs:
        raise ValueError("empty training corpus")
    Ev = np.asarray(getattr(E, "values", E), dtype=np.float64)
    pool = np.stack([Ev[s].mean(axis=0) for s in seqs])
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState.for_params(params)
    result = TrainResult(params, [])
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", encoding="utf-8", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "batch", "h", "u", "t", "total"])
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(seqs))
            sums = np.zeros(3)
            for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
                batch = order[lo : lo + cfg.batch_size]
                U, g_u = ortho_loss_and_grad(params.aem, cfg.lam, cfg.ortho_offset_s)
                acc = params.zeros_like()
                h_sum = t_sum = 0.0
                for idx in batch:
                    state = forward(seqs[idx], Ev, params)
                    negs = sample_negatives(pool, cfg.negatives_per_sample, rng, int(idx))
                    H, T, g = sentence_loss_and_grads(state, params, negs, cfg)
                    if not (math.isfinite(H) and math.isfinite(T) and math.isfinite(U)):
                        raise NumericError(f"non-finite loss at sentence index {int(idx)} (epoch {epoch})")
                    assert H >= 0 and T >= 0 and U >= 0
                    h_sum += H
                    t_sum += T
                    _accumulate(acc, g)
                n = len(batch)
                for _, a in acc.named_tensors():
                    a /= n
                acc.aem += g_u
                adam_step(params, acc, opt, cfg)
                row = LossBreakdown(h_sum / n, U, t_sum / n)
                sums += n * np.array([row.h, row.u, row.t])
                result.batch_log.append((epoch, b, row.h, row.u, row.t, row.total))
                if writer is not None:
                    writer.writerow([epoch, b, repr(row.h), repr(row.u), repr(row.t), repr(row.total)])
            ep = LossBreakdown(*(sums / len(seqs)))
            result.epoch_losses.append(ep)
            log.info("epoch %d: h=%.4f u=%.4f t=%.4f total=%.4f", epoch, ep.h, ep.u, ep.t, ep.total)
            if checkpoint_dir is not None:
                save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch}.ckpt", params, vocab_hash,
                                meta={"epoch": epoch})
    finally:
        if fh is not None:
            fh.close()
    return result
