import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmam.model import (
    CmamParams,
    Upstream,
    aspect_probs,
    aspect_sentences,
    average_sentence,
    conv_attention,
    forward,
    gradients,
    init_params,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
    sigmoid,
)
from cmam.objective import hinge_loss_and_grad, ortho_loss_and_grad, tlas_loss_and_grad


def random_params(rng, d, K, lengths, scale=0.5):
    return CmamParams(
        [rng.normal(scale=scale, size=(L, d, K)) for L in lengths],
        [rng.normal(scale=0.2, size=K) for _ in lengths],
        rng.normal(scale=scale, size=(K, d)),
        rng.normal(scale=0.2, size=K),
        rng.normal(size=(K, d)),
    )


def brute_attention_pre(S, params):
    n, d = S.shape
    K = params.n_aspects
    out = np.zeros((n, K))
    for W, b in zip(params.kernels, params.kernel_bias):
        L = W.shape[0]
        r = L // 2
        for i in range(n):
            for k in range(K):
                acc = b[k]
                for t in range(L):
                    j = i + t - r
                    if 0 <= j < n:
                        acc += sum(S[j, c] * W[t, c, k] for c in range(d))
                out[i, k] += acc
    return out / len(params.kernels)


def test_zero_kernels_give_half_attention(rng):
    p = random_params(rng, 3, 2, [1, 3])
    for W, b in zip(p.kernels, p.kernel_bias):
        W[:] = 0
        b[:] = 0
    A_pre, A = conv_attention(rng.normal(size=(4, 3)), p)
    assert np.all(A_pre == 0) and np.all(A == 0.5)


def test_one_by_one_kernel_is_linear_map(rng):
    S = rng.normal(size=(5, 3))
    W = np.zeros((1, 3, 2))
    W[0, 0, :] = 1.0
    b = np.array([0.3, -0.7])
    p = CmamParams([W], [b], np.zeros((2, 3)), np.zeros(2), np.ones((2, 3)))
    A_pre, _ = conv_attention(S, p)
    np.testing.assert_allclose(A_pre, S[:, [0]] + b, atol=1e-15)


def test_conv_attention_matches_brute_force(rng):
    S = rng.normal(size=(4, 3))
    p = random_params(rng, 3, 2, [1, 3])
    A_pre, A = conv_attention(S, p)
    np.testing.assert_allclose(A_pre, brute_attention_pre(S, p), rtol=0, atol=1e-10)
    np.testing.assert_allclose(A, 1 / (1 + np.exp(-A_pre)), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 8), d=st.integers(1, 8), K=st.integers(1, 4),
       lengths=st.lists(st.sampled_from([1, 3, 5]), min_size=1, max_size=3), seed=st.integers(0, 2**31))
def test_conv_attention_property(n, d, K, lengths, seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(n, d))
    p = random_params(rng, d, K, lengths)
    A_pre, A = conv_attention(S, p)
    np.testing.assert_allclose(A_pre, brute_attention_pre(S, p), rtol=0, atol=1e-10)
    assert np.all((A > 0) & (A < 1))


def test_conv_attention_rejects_non_finite(rng):
    p = random_params(rng, 3, 2, [1])
    S = rng.normal(size=(3, 3))
    S[1, 1] = np.nan
    with pytest.raises(FloatingPointError):
        conv_attention(S, p)


def test_aspect_sentences_examples():
    S = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 4.0]])
    A = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    out = aspect_sentences(A, S)
    np.testing.assert_allclose(out[0], S.sum(0))
    np.testing.assert_allclose(out[1], [0.0, 0.0])
    A = np.array([[0.2, 0.9], [0.5, 0.1], [0.4, 0.3]])
    # row 0: 0.2*(1,2) + 0.5*(3,-1) + 0.4*(0.5,4) = (1.9, 1.5)
    # row 1: 0.9*(1,2) + 0.1*(3,-1) + 0.3*(0.5,4) = (1.35, 2.9)
    np.testing.assert_allclose(aspect_sentences(A, S), [[1.9, 1.5], [1.35, 2.9]], atol=1e-14)


def test_average_sentence(rng):
    v = rng.normal(size=4)
    np.testing.assert_allclose(average_sentence(np.tile(v, (3, 1))), v, atol=1e-15)
    np.testing.assert_allclose(average_sentence(np.array([[1.0, 0.0], [0.0, 1.0]])), [0.5, 0.5])
    rows = rng.normal(size=(30, 7))
    expected = [sum(rows[k, c] for k in range(30)) / 30 for c in range(7)]
    np.testing.assert_allclose(average_sentence(rows), expected, rtol=0, atol=1e-12)


def test_aspect_probs(rng):
    p = random_params(rng, 4, 3, [1])
    p.head_w[:] = 0
    p.head_b[:] = 0
    np.testing.assert_allclose(aspect_probs(rng.normal(size=4), p), 0.5)
    p.head_b[1] = 10
    assert aspect_probs(rng.normal(size=4), p)[1] > 0.999
    q = random_params(rng, 4, 3, [1])
    AS = rng.normal(size=4)
    expected = [1 / (1 + np.exp(-(sum(q.head_w[k, c] * AS[c] for c in range(4)) + q.head_b[k]))) for k in range(3)]
    np.testing.assert_allclose(aspect_probs(AS, q), expected, rtol=0, atol=1e-12)


def test_reconstruct(rng):
    aem = rng.normal(size=(4, 3))
    eps = 1e-6
    np.testing.assert_allclose(reconstruct(np.array([1, eps, eps, eps]), aem), aem[0], atol=1e-3)
    np.testing.assert_allclose(reconstruct(np.full(4, 0.3), aem), aem.mean(0), atol=1e-15)
    p = rng.uniform(0.05, 0.95, size=4)
    expected = [sum(p[k] * aem[k, c] for k in range(4)) / sum(p) for c in range(3)]
    np.testing.assert_allclose(reconstruct(p, aem), expected, rtol=0, atol=1e-12)


def test_sigmoid_stable_and_derivative():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s)) and s[2] == 0.5
    y = np.linspace(-6, 6, 101)
    h = 1e-6
    np.testing.assert_allclose((sigmoid(y + h) - sigmoid(y - h)) / (2 * h), sigmoid(y) * (1 - sigmoid(y)), atol=1e-9)


def test_forward_composition_and_determinism(rng):
    E = rng.normal(size=(10, 5))
    ids = np.array([3, 1, 4, 1, 5])
    p = random_params(rng, 5, 3, [1, 3, 5])
    st1 = forward(ids, E, p)
    st2 = forward(ids, E, p)
    for name in ("S", "A_pre", "A", "as_per_aspect", "AS", "p", "RS", "ts"):
        assert np.array_equal(getattr(st1, name), getattr(st2, name))
    np.testing.assert_allclose(st1.AS, st1.as_per_aspect.mean(0), atol=1e-12)
    np.testing.assert_allclose(st1.ts, E[ids].mean(0))
    np.testing.assert_allclose(st1.RS, reconstruct(st1.p, p.aem), atol=1e-15)
    with pytest.raises(ValueError):
        forward(np.array([], dtype=int), E, p)


def test_aspect_permutation_equivariance(rng):
    E = rng.normal(size=(8, 4))
    ids = np.array([1, 2, 3, 4, 5, 6])
    p = random_params(rng, 4, 4, [1, 3])
    perm = np.array([2, 0, 3, 1])
    q = CmamParams([W[:, :, perm] for W in p.kernels], [b[perm] for b in p.kernel_bias],
                   p.head_w[perm], p.head_b[perm], p.aem[perm])
    a, b = forward(ids, E, p), forward(ids, E, q)
    np.testing.assert_allclose(b.A, a.A[:, perm], atol=1e-13)
    np.testing.assert_allclose(b.as_per_aspect, a.as_per_aspect[perm], atol=1e-13)
    np.testing.assert_allclose(b.p, a.p[perm], atol=1e-13)
    np.testing.assert_allclose(b.RS, a.RS, atol=1e-13)


def test_zero_upstream_gives_zero_gradients(rng):
    E = rng.normal(size=(6, 4))
    p = random_params(rng, 4, 3, [1, 3])
    st = forward(np.arange(6), E, p)
    g = gradients(st, p, Upstream.zeros(3, 4))
    for _, arr in g.named_tensors():
        assert not np.any(arr)


def _fd(f, arr, h=1e-4):
    out = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        gflat[i] = (up - down) / (2 * h)
    return out


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    N, d, K = 5, 8, 4
    E = rng.normal(size=(N, d))
    ids = np.arange(N)
    negs = rng.normal(scale=0.5, size=(3, d))
    lam, s = 0.5, 0.1
    p = random_params(rng, d, K, [1, 3])

    def loss():
        st = forward(ids, E, p)
        return (hinge_loss_and_grad(st.RS, st.ts, negs)[0] + ortho_loss_and_grad(p.aem, lam, s)[0]
                + tlas_loss_and_grad(st, p.aem)[0])

    st = forward(ids, E, p)
    _, g_rs = hinge_loss_and_grad(st.RS, st.ts, negs)
    U, g_u = ortho_loss_and_grad(p.aem, lam, s)
    T, g_asp, g_aem = tlas_loss_and_grad(st, p.aem)
    assert U > 0 and T > 0
    g = gradients(st, p, Upstream(g_rs, g_asp, g_aem + g_u))
    for (name, arr), (_, ga) in zip(p.named_tensors(), g.named_tensors()):
        num = _fd(loss, arr)
        rel = np.linalg.norm(ga - num) / max(np.linalg.norm(num), 1e-12)
        assert rel < 1e-4, name


def test_attention_gradient_is_sigmoid_derivative(rng):
    E = rng.normal(size=(4, 3))
    p = random_params(rng, 3, 2, [1])
    st = forward(np.arange(4), E, p)
    # upstream that touches only AS_per_aspect row 0 through coordinate 0 of S
    up = Upstream.zeros(2, 3)
    up.as_per_aspect[0, 0] = 1.0
    g = gradients(st, p, up)
    # dL/dA[:,0] = S[:,0]; dL/dA_pre = S[:,0] * A(1-A); 1x1 kernel grad = S^T (that)
    expected = E.T @ (E[:, 0] * st.A[:, 0] * (1 - st.A[:, 0]))
    np.testing.assert_allclose(g.kernels[0][0, :, 0], expected, atol=1e-14)
    np.testing.assert_allclose(g.kernel_bias[0][0], (E[:, 0] * st.A[:, 0] * (1 - st.A[:, 0])).sum(), atol=1e-14)


def test_init_params_shapes_and_bounds(rng):
    aem = rng.normal(size=(5, 7))
    p = init_params(aem, (1, 3, 5), rng)
    assert p.kernel_lengths == (1, 3, 5)
    for W in p.kernels:
        bound = np.sqrt(6 / (W.shape[0] * 7 + 5))
        assert np.all(np.abs(W) <= bound)
    assert not p.head_w.any() and not p.head_b.any()
    with pytest.raises(ValueError):
        init_params(aem, (2,), rng)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    p = random_params(rng, 6, 3, [1, 3, 5])
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p, vocab_hash="abc", meta={"epoch": 2})
    ck = load_checkpoint(path)
    assert ck.vocab_hash == "abc" and ck.meta == {"epoch": 2}
    for (n1, a), (n2, b) in zip(p.named_tensors(), ck.params.named_tensors()):
        assert n1 == n2 and a.dtype == b.dtype and np.array_equal(a, b)
    save_checkpoint(tmp_path / "again.ckpt", ck.params, vocab_hash="abc", meta={"epoch": 2})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
