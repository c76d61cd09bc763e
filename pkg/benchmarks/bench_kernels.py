"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are imported directly, so CMAM_BACKEND does not matter here.
Each numba kernel is called once before timing to exclude compilation.
"""
import argparse
import time

import numpy as np

from cmam import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # attention convolution at training size: 12 tokens, d=200, K=30, kernel length 5
    S = rng.normal(size=(12, 200))
    W = rng.normal(size=(5, 200, 30))
    b = rng.normal(size=30)
    dout = rng.normal(size=(12, 30))

    def conv(impl):
        return lambda: [impl(S, W, b) for _ in range(200)]

    def conv_grad(impl):
        return lambda: [impl(S, 5, dout) for _ in range(200)]

    # skip-gram: 20k pairs, 20 negatives, V=9000, d=200
    V, d, P = 9000, 200, 20_000
    w_in0 = (rng.random((V, d)) - 0.5) / d
    w_out0 = rng.normal(scale=0.01, size=(V, d))
    centers = rng.integers(0, V, P)
    contexts = rng.integers(0, V, P)
    negatives = rng.integers(0, V, (P, 20))
    lrs = np.full(P, 0.025)

    def sgns(impl):
        def run():
            impl(w_in0.copy(), w_out0.copy(), centers, contexts, negatives, lrs)
        return run

    # k-means assignment: 9000 points, 30 centroids
    X = rng.normal(size=(9000, 200))
    C = rng.normal(size=(30, 200))

    def assign(impl):
        return lambda: impl(X, C)

    return [
        ("conv_same x200", conv, kernels.conv_same_nb, kernels.conv_same_np),
        ("conv_same_grad x200", conv_grad, kernels.conv_same_grad_nb, kernels.conv_same_grad_np),
        ("sgns 20k pairs", sgns, kernels.sgns_pairs_nb, kernels.sgns_pairs_np),
        ("kmeans assign", assign, kernels.assign_nb, kernels.assign_np),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for name, make, nb, npy in cases(rng):
        make(nb)()  # compile
        t_nb = best_of(make(nb), args.repeat)
        t_np = best_of(make(npy), args.repeat)
        print(f"{name:<22}{t_nb:10.4f}{t_np:10.4f}{t_np / t_nb:9.1f}")


if __name__ == "__main__":
    main()
