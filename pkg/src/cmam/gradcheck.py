"""Central finite-difference check of every parameter gradient on random small instances."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import CmamParams, Upstream, forward, gradients
from .objective import hinge_loss_and_grad, ortho_loss_and_grad, tlas_loss_and_grad, top_two

COMPONENTS = ("H", "U", "T", "L")


@dataclass
class Instance:
    E: np.ndarray
    ids: np.ndarray
    params: CmamParams
    negatives: np.ndarray
    lam: float
    s: float


@dataclass
class CheckResult:
    component: str
    tensor: str
    rel_error: float
    instance: int = 0


def random_instance(rng: np.random.Generator, max_n=8, max_d=8, max_k=4, max_f=3) -> Instance:
    N = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(2, max_d + 1))
    K = int(rng.integers(2, max_k + 1))
    F = int(rng.integers(1, max_f + 1))
    lengths = rng.choice([1, 3, 5], size=F)
    E = rng.normal(size=(N, d))
    kernels = [rng.normal(scale=0.5, size=(int(L), d, K)) for L in lengths]
    biases = [rng.normal(scale=0.3, size=K) for _ in lengths]
    params = CmamParams(kernels, biases, rng.normal(scale=0.5, size=(K, d)),
                        rng.normal(scale=0.3, size=K), rng.normal(size=(K, d)))
    negatives = rng.normal(scale=0.5, size=(int(rng.integers(1, 4)), d))
    return Instance(E, np.arange(N), params, negatives, float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.0, 0.3)))


def _losses(inst: Instance, params: CmamParams) -> dict[str, float]:
    st = forward(inst.ids, inst.E, params)
    H = hinge_loss_and_grad(st.RS, st.ts, inst.negatives)[0]
    U = ortho_loss_and_grad(params.aem, inst.lam, inst.s)[0]
    T = tlas_loss_and_grad(st, params.aem)[0]
    return {"H": H, "U": U, "T": T, "L": H + U + T}


def analytic(inst: Instance) -> dict[str, CmamParams]:
    params = inst.params
    st = forward(inst.ids, inst.E, params)
    K, d = params.aem.shape
    _, g_rs = hinge_loss_and_grad(st.RS, st.ts, inst.negatives)
    _, g_u = ortho_loss_and_grad(params.aem, inst.lam, inst.s)
    _, g_asp, g_aem = tlas_loss_and_grad(st, params.aem)
    zero = Upstream.zeros(K, d)
    gH = gradients(st, params, Upstream(g_rs, zero.as_per_aspect, zero.aem))
    gU = params.zeros_like()
    gU.aem += g_u
    gT = gradients(st, params, Upstream(zero.rs, g_asp, g_aem))
    gL = gradients(st, params, Upstream(g_rs, g_asp, g_aem + g_u))
    return {"H": gH, "U": gU, "T": gT, "L": gL}


def near_kink(inst: Instance, tol: float = 1e-2) -> bool:
    """True when a hinge, clamp or top-2 ordering sits close enough to switch under FD."""
    params = inst.params
    st = forward(inst.ids, inst.E, params)
    margins = 1.0 - st.RS @ st.ts + inst.negatives @ st.RS
    if np.any(np.abs(margins) < tol):
        return True
    A_hat = params.aem / np.linalg.norm(params.aem, axis=1, keepdims=True)
    fro = np.linalg.norm(A_hat @ A_hat.T - np.eye(len(A_hat)))
    if abs(fro - inst.s) < tol:
        return True
    p = np.sort(st.p)[::-1]
    if p[0] - p[1] < tol or (len(p) > 2 and p[1] - p[2] < tol):
        return True
    j, l = top_two(st.p)
    asp = st.as_per_aspect
    n1 = np.linalg.norm(asp[j] - params.aem[j])
    n2 = np.linalg.norm(asp[j] - asp[l])
    return abs(1 + n1 - n2) < tol or n1 < tol or n2 < tol


def check_instance(inst: Instance, step: float = 1e-4) -> list[CheckResult]:
    """Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8) per tensor and component."""
    grads = analytic(inst)
    work = inst.params.copy()
    named_work = dict(work.named_tensors())
    numeric = {c: {name: np.zeros_like(a) for name, a in named_work.items()} for c in COMPONENTS}
    for name, arr in named_work.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = _losses(inst, work)
            flat[i] = orig - step
            minus = _losses(inst, work)
            flat[i] = orig
            for c in COMPONENTS:
                numeric[c][name].reshape(-1)[i] = (plus[c] - minus[c]) / (2 * step)
    out = []
    for c in COMPONENTS:
        for name, a in grads[c].named_tensors():
            n = numeric[c][name]
            denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
            out.append(CheckResult(c, name, float(np.linalg.norm(a - n) / denom)))
    return out


def run_suite(n_instances: int = 100, seed: int = 0, step: float = 1e-4, **sizes) -> list[CheckResult]:
    """Check ``n_instances`` random instances, redrawing any that sit near a kink."""
    rng = np.random.default_rng(seed)
    results = []
    done = 0
    while done < n_instances:
        inst = random_instance(rng, **sizes)
        if near_kink(inst):
            continue
        results += [replace(r, instance=done) for r in check_instance(inst, step)]
        done += 1
    return results
