"""Numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 3]

Each kernel is warmed up once (jit compilation is excluded), then timed as
the best of ``--repeat`` runs.  Results are checked for agreement before
timing so a fast wrong kernel cannot win.
"""
import argparse
import time

import numpy as np

from sgdiff import _kernels, cutoff, rng
from sgdiff.problems import ProblemSpec


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    seed = int(rng.seed_to_u64(0))
    sgd = (0, 1.0, 0.5, np.array([0.0]), 2.0, 0.1, 1000, seed, 20_000, 4096, 0, 0, np.zeros(1), 2.0,
           True, False)
    trig = ProblemSpec("trig", noise_scale=2.0)
    sde = (1, 1.0, np.array([0.5]), 0.0, 0.1, 0.1, 1e-3, 100, 20, seed, 2000, 1024,
           np.ascontiguousarray(cutoff.sqrt_sigma(trig)), 6.0, 12.0, True, 2, 0, np.zeros(1), np.inf, True, False)
    x = np.linspace(-6.0, 6.0, 4097)
    law = trig.xi_law
    aps = (np.sin(x), x, -6.0, x[1] - x[0], 0.2, 1, 1.0, 2.0, np.ascontiguousarray(law.nodes[:, 0]), law.weights)
    n = 4097
    r = np.random.default_rng(0)
    lo, up = r.uniform(0, 1, n), r.uniform(0, 1, n)
    lo[0] = up[-1] = 0.0
    th = (lo, -(lo + up), up, 0.01, 0.5, r.normal(size=n), 2000, 100)
    return {
        "sgd_ensemble (2e7 steps)": (_kernels.sgd_ensemble, sgd, 0),
        "sde_ensemble (4e6 substeps)": (_kernels.sde_ensemble, sde, 0),
        "apply_S (4097 nodes x 64 quad)": (_kernels.apply_S, aps, 0),
        "theta_run (CN, 4097 x 2000)": (_kernels.theta_run, th, None),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':34s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, (fn, a, idx) in cases().items():
        out_nb = fn(*a, numba=True)
        out_np = fn(*a, numba=False)
        pick = (lambda o: o) if idx is None else (lambda o: o[idx])
        assert np.allclose(pick(out_nb), pick(out_np), rtol=1e-9, atol=1e-12), name
        t_nb = best_of(lambda: fn(*a, numba=True), args.repeat)
        t_np = best_of(lambda: fn(*a, numba=False), args.repeat)
        print(f"{name:34s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
