"""Inner loops: same-padded 1-D convolution, skip-gram updates, k-means assignment.

Every kernel exists twice: an ``_nb`` version compiled by numba and an ``_np``
version written with plain numpy.  Both receive identical inputs (random draws
are made by the caller), so they agree up to floating-point summation order.
The public names at the bottom point at whichever backend ``_accel`` selected,
except the convolution, which always uses the matmul form.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import BACKEND, njit, prange

# ---------------------------------------------------------------------------
# convolution over token positions
# ---------------------------------------------------------------------------


@njit
def conv_same_nb(S, W, b):
    n, d = S.shape
    L, _, K = W.shape
    r = (L - 1) // 2
    out = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            out[i, k] = b[k]
        for t in range(L):
            src = i + t - r
            if src < 0 or src >= n:
                continue
            for c in range(d):
                s = S[src, c]
                for k in range(K):
                    out[i, k] += s * W[t, c, k]
    return out


def conv_same_np(S, W, b):
    n = S.shape[0]
    L, _, K = W.shape
    r = (L - 1) // 2
    padded = np.zeros((n + 2 * r, S.shape[1]))
    padded[r : r + n] = S
    out = np.empty((n, K))
    out[:] = b
    for t in range(L):
        out += padded[t : t + n] @ W[t]
    return out


@njit
def conv_same_grad_nb(S, L, dout):
    """Gradient of ``conv_same`` w.r.t. its weights (L x d x K) and bias (K)."""
    n, d = S.shape
    K = dout.shape[1]
    r = (L - 1) // 2
    dW = np.zeros((L, d, K))
    db = np.zeros(K)
    for i in range(n):
        for k in range(K):
            db[k] += dout[i, k]
        for t in range(L):
            src = i + t - r
            if src < 0 or src >= n:
                continue
            for c in range(d):
                s = S[src, c]
                for k in range(K):
                    dW[t, c, k] += s * dout[i, k]
    return dW, db


def conv_same_grad_np(S, L, dout):
    n, d = S.shape
    r = (L - 1) // 2
    padded = np.zeros((n + 2 * r, d))
    padded[r : r + n] = S
    dW = np.empty((L, d, dout.shape[1]))
    for t in range(L):
        dW[t] = padded[t : t + n].T @ dout
    return dW, dout.sum(axis=0)


# ---------------------------------------------------------------------------
# skip-gram with negative sampling
# ---------------------------------------------------------------------------


@njit
def _sgns_pair_nb(w_in, w_out, c, o, negs, lr, grad_in):
    d = w_in.shape[1]
    for k in range(d):
        grad_in[k] = 0.0
    for q in range(negs.shape[0] + 1):
        if q == 0:
            target = o
            label = 1.0
        else:
            target = negs[q - 1]
            if target == o:
                continue
            label = 0.0
        dot = 0.0
        for k in range(d):
            dot += w_in[c, k] * w_out[target, k]
        g = (label - 1.0 / (1.0 + math.exp(-dot))) * lr
        for k in range(d):
            grad_in[k] += g * w_out[target, k]
        for k in range(d):
            w_out[target, k] += g * w_in[c, k]
    for k in range(d):
        w_in[c, k] += grad_in[k]


@njit
def sgns_pairs_nb(w_in, w_out, centers, contexts, negatives, lrs):
    grad_in = np.empty(w_in.shape[1])
    for p in range(centers.shape[0]):
        _sgns_pair_nb(w_in, w_out, centers[p], contexts[p], negatives[p], lrs[p], grad_in)


@njit(parallel=True, cache=False)
def sgns_pairs_hogwild_nb(w_in, w_out, centers, contexts, negatives, lrs):
    """Lock-free variant; concurrent row updates race, results are not reproducible."""
    for p in prange(centers.shape[0]):
        grad_in = np.empty(w_in.shape[1])
        _sgns_pair_nb(w_in, w_out, centers[p], contexts[p], negatives[p], lrs[p], grad_in)


def sgns_pairs_np(w_in, w_out, centers, contexts, negatives, lrs):
    for p in range(centers.shape[0]):
        c = centers[p]
        o = contexts[p]
        negs = negatives[p]
        targets = np.concatenate(([o], negs[negs != o]))
        labels = np.zeros(targets.shape[0])
        labels[0] = 1.0
        h = w_in[c].copy()
        grad_in = np.zeros_like(h)
        # sequential so that repeated negatives see each other's updates
        for target, label in zip(targets, labels):
            dot = h @ w_out[target]
            g = (label - 1.0 / (1.0 + math.exp(-dot))) * lrs[p]
            grad_in += g * w_out[target]
            w_out[target] += g * h
        w_in[c] += grad_in


# ---------------------------------------------------------------------------
# k-means assignment
# ---------------------------------------------------------------------------


@njit
def assign_nb(X, C):
    n, d = X.shape
    K = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        arg = 0
        for k in range(K):
            acc = 0.0
            for c in range(d):
                diff = X[i, c] - C[k, c]
                acc += diff * diff
            if acc < best:
                best = acc
                arg = k
        labels[i] = arg
        dist[i] = best
    return labels, dist


def assign_np(X, C, block=1024):
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for lo in range(0, n, block):
        diff = X[lo : lo + block, None, :] - C[None, :, :]
        sq = np.einsum("ikc,ikc->ik", diff, diff)
        labels[lo : lo + block] = np.argmin(sq, axis=1)
        dist[lo : lo + block] = sq[np.arange(sq.shape[0]), labels[lo : lo + block]]
    return labels, dist


# The convolution at model sizes is a handful of small matrix products, which
# BLAS does faster than the compiled loops (see benchmarks/bench_kernels.py),
# so both backends use the numpy form.  The loop versions stay as references.
conv_same = conv_same_np
conv_same_grad = conv_same_grad_np

if BACKEND == "numba":
    sgns_pairs = sgns_pairs_nb
    assign = assign_nb
else:
    sgns_pairs = sgns_pairs_np
    assign = assign_np
