"""Convolutional multi-attention forward pass, its exact gradients, and checkpoints.

Shapes: a sentence ``S`` is N x d, attention ``A`` is N x K, one
attention-weighted sentence per aspect gives a K x d matrix whose mean feeds a
sigmoid aspect head; the reconstruction is the probability-weighted mean of
the aspect embedding rows.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import kernels

DEFAULT_KERNEL_LENGTHS = (1, 3, 5)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class CmamParams:
    """Learnable tensors.  Also used as the container for their gradients."""

    kernels: list[np.ndarray]
    kernel_bias: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray
    aem: np.ndarray

    def __post_init__(self):
        if not self.kernels or len(self.kernels) != len(self.kernel_bias):
            raise ValueError("need F >= 1 kernels, each with a bias vector")
        K, d = self.aem.shape
        for W, b in zip(self.kernels, self.kernel_bias):
            if W.ndim != 3 or W.shape[1:] != (d, K) or W.shape[0] % 2 == 0:
                raise ValueError(f"kernel shape {W.shape} invalid for d={d}, K={K} (length must be odd)")
            if b.shape != (K,):
                raise ValueError("kernel bias must have K entries")
        if self.head_w.shape != (K, d) or self.head_b.shape != (K,):
            raise ValueError("head shapes must be (K, d) and (K,)")

    @property
    def n_aspects(self) -> int:
        return self.aem.shape[0]

    @property
    def dim(self) -> int:
        return self.aem.shape[1]

    @property
    def kernel_lengths(self) -> tuple[int, ...]:
        return tuple(W.shape[0] for W in self.kernels)

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for f, (W, b) in enumerate(zip(self.kernels, self.kernel_bias)):
            yield f"kernel{f}", W
            yield f"kernel_bias{f}", b
        yield "head_w", self.head_w
        yield "head_b", self.head_b
        yield "aem", self.aem

    def copy(self) -> "CmamParams":
        return CmamParams(
            [W.copy() for W in self.kernels],
            [b.copy() for b in self.kernel_bias],
            self.head_w.copy(),
            self.head_b.copy(),
            self.aem.copy(),
        )

    def zeros_like(self) -> "CmamParams":
        return CmamParams(
            [np.zeros_like(W) for W in self.kernels],
            [np.zeros_like(b) for b in self.kernel_bias],
            np.zeros_like(self.head_w),
            np.zeros_like(self.head_b),
            np.zeros_like(self.aem),
        )


def init_params(aem: np.ndarray, kernel_lengths: Sequence[int] = DEFAULT_KERNEL_LENGTHS,
                rng: np.random.Generator | None = None) -> CmamParams:
    """Fan-scaled uniform kernels, zero biases, zero head (so p starts at 0.5)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    aem = np.array(aem, dtype=np.float64)
    K, d = aem.shape
    Ws, bs = [], []
    for L in kernel_lengths:
        if L < 1 or L % 2 == 0:
            raise ValueError(f"kernel length {L} must be a positive odd integer")
        bound = np.sqrt(6.0 / (L * d + K))
        Ws.append(rng.uniform(-bound, bound, size=(L, d, K)))
        bs.append(np.zeros(K))
    return CmamParams(Ws, bs, np.zeros((K, d)), np.zeros(K), aem)


@dataclass
class ForwardState:
    S: np.ndarray
    A_pre: np.ndarray
    A: np.ndarray
    as_per_aspect: np.ndarray
    AS: np.ndarray
    p: np.ndarray
    p_hat: np.ndarray
    RS: np.ndarray
    ts: np.ndarray


def conv_attention(S: np.ndarray, params: CmamParams) -> tuple[np.ndarray, np.ndarray]:
    if S.shape[0] < 1:
        raise ValueError("sentence must contain at least one token")
    if not np.all(np.isfinite(S)):
        raise FloatingPointError("non-finite sentence embeddings")
    A_pre = kernels.conv_same(S, params.kernels[0], params.kernel_bias[0])
    for W, b in zip(params.kernels[1:], params.kernel_bias[1:]):
        A_pre += kernels.conv_same(S, W, b)
    A_pre /= len(params.kernels)
    return A_pre, sigmoid(A_pre)


def aspect_sentences(A: np.ndarray, S: np.ndarray) -> np.ndarray:
    return A.T @ S


def average_sentence(as_per_aspect: np.ndarray) -> np.ndarray:
    return as_per_aspect.mean(axis=0)


def aspect_probs(AS: np.ndarray, params: CmamParams) -> np.ndarray:
    return sigmoid(params.head_w @ AS + params.head_b)


def reconstruct(p: np.ndarray, aem: np.ndarray) -> np.ndarray:
    total = p.sum()
    assert total > 0, "aspect probabilities must have a positive sum"
    return (p / total) @ aem


def forward(sentence, E, params: CmamParams) -> ForwardState:
    """Run the full model on one sentence (EncodedSentence or id array)."""
    ids = np.asarray(getattr(sentence, "ids", sentence), dtype=np.int64)
    if ids.shape[0] == 0:
        raise ValueError("empty sentence")
    S = np.asarray(getattr(E, "values", E))[ids]
    A_pre, A = conv_attention(S, params)
    asp = aspect_sentences(A, S)
    AS = average_sentence(asp)
    p = aspect_probs(AS, params)
    p_hat = p / p.sum()
    RS = p_hat @ params.aem
    return ForwardState(S, A_pre, A, asp, AS, p, p_hat, RS, S.mean(axis=0))


@dataclass
class Upstream:
    """Loss gradients w.r.t. the forward quantities the losses read."""

    rs: np.ndarray
    as_per_aspect: np.ndarray
    aem: np.ndarray

    @classmethod
    def zeros(cls, K: int, d: int) -> "Upstream":
        return cls(np.zeros(d), np.zeros((K, d)), np.zeros((K, d)))


def gradients(state: ForwardState, params: CmamParams, upstream: Upstream) -> CmamParams:
    """Back-propagate ``upstream`` to every learnable tensor (word vectors stay frozen)."""
    K = params.n_aspects
    g_rs = upstream.rs
    g_aem = upstream.aem + np.outer(state.p_hat, g_rs)
    g_phat = params.aem @ g_rs
    g_p = (g_phat - g_phat @ state.p_hat) / state.p.sum()
    g_z = g_p * state.p * (1.0 - state.p)
    g_head_w = np.outer(g_z, state.AS)
    g_AS = params.head_w.T @ g_z
    g_asp = upstream.as_per_aspect + g_AS / K
    g_A = state.S @ g_asp.T
    g_Apre = g_A * state.A * (1.0 - state.A)
    g_Apre /= len(params.kernels)
    g_W, g_b = [], []
    for W in params.kernels:
        dW, db = kernels.conv_same_grad(state.S, W.shape[0], g_Apre)
        g_W.append(dW)
        g_b.append(db)
    return CmamParams(g_W, g_b, g_head_w, g_z, g_aem)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

_MAGIC = b"CMAMCKPT1\n"


def save_checkpoint(path: str | Path, params: CmamParams, vocab_hash: str = "", meta: dict | None = None) -> None:
    """Byte-deterministic container: magic, JSON header, raw little-endian float64 tensors."""
    names, blobs = [], []
    for name, arr in params.named_tensors():
        names.append({"name": name, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "d": params.dim,
        "K": params.n_aspects,
        "F": len(params.kernels),
        "kernel_lengths": list(params.kernel_lengths),
        "vocab_hash": vocab_hash,
        "tensors": names,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


@dataclass
class Checkpoint:
    params: CmamParams
    vocab_hash: str
    meta: dict = field(default_factory=dict)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a CMAM checkpoint")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    tensors = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(spec["shape"])
        tensors[spec["name"]] = arr.astype(np.float64)
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing or missing bytes")
    F = header["F"]
    params = CmamParams(
        [tensors[f"kernel{f}"] for f in range(F)],
        [tensors[f"kernel_bias{f}"] for f in range(F)],
        tensors["head_w"],
        tensors["head_b"],
        tensors["aem"],
    )
    return Checkpoint(params, header["vocab_hash"], header.get("meta", {}))
