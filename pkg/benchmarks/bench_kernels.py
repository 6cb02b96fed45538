"""Compare the compiled and numpy kernel backends.

Times the per-hypothesis mirror-statistic kernel (null CDF, mirror and
median against a sorted uniform pool) for each available backend, and
the all-points reference on a small problem.  Also reports the largest
disagreement between backends.

Usage::

    python3 benchmarks/bench_kernels.py [--m 5000] [--n-mc 50000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from zapfdr import kernels
from zapfdr.asymp import assessor_coefficients, shared_uniforms
from zapfdr.model import BetaMixtureParams
from zapfdr.numeric import make_rng


def problem(m, n_mc, seed=0):
    rng = make_rng(seed, 1)
    x = rng.normal(size=(m, 2))
    u = np.clip(rng.random(m), 1e-15, 1 - 1e-15)
    params = BetaMixtureParams([-2.0, 0.5, 0.2], [-2.0, -0.4, 0.1], [-1.0, 0.3, 0.0],
                               [-1.0, -0.3, 0.2])
    xt = np.column_stack([np.ones(m), x])
    coefs = assessor_coefficients(params, xt)
    pool = shared_uniforms(n_mc, seed)
    lu, l1 = np.log(pool), np.log1p(-pool)
    t_hat = kernels.assessor_values(coefs, np.log(u), np.log1p(-u), backend="python")
    return t_hat, coefs, pool, lu, l1


def best_time(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=5000)
    ap.add_argument("--n-mc", type=int, default=50000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--brute-m", type=int, default=200, help="hypotheses for the reference")
    args = ap.parse_args(argv)

    backends = ["python"] + (["native"] if kernels._native is not None else [])
    print(f"m={args.m} n_mc={args.n_mc} default backend={kernels.BACKEND}")
    t_hat, coefs, pool, lu, l1 = problem(args.m, args.n_mc)
    results = {}
    for b in backends:
        sec, out = best_time(lambda: kernels.mirror_stats(t_hat, coefs, pool, lu, l1, backend=b),
                             args.repeat)
        results[b] = out
        print(f"  mirror_stats  {b:<10} {sec * 1e3:10.2f} ms  ({sec / args.m * 1e6:.2f} us/hyp)")
        sec, _ = best_time(lambda: kernels.assessor_values(coefs, np.log(pool[:args.m]),
                                                           np.log1p(-pool[:args.m]), backend=b),
                           args.repeat)
        print(f"  assessor      {b:<10} {sec * 1e3:10.2f} ms")
    if "native" in results:
        diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(c))))
                   for a, c in zip(results["python"], results["native"]))
        sec_py = best_time(lambda: kernels.mirror_stats(t_hat, coefs, pool, lu, l1,
                                                        backend="python"), 1)[0]
        sec_nat = best_time(lambda: kernels.mirror_stats(t_hat, coefs, pool, lu, l1,
                                                         backend="native"), 1)[0]
        print(f"  speedup native/python {sec_py / sec_nat:.1f}x, max abs difference {diff:.2e}")

    k = min(args.brute_m, args.m)
    sub = (t_hat[:k], tuple(c[:k] for c in coefs))
    sec, _ = best_time(lambda: kernels.mirror_stats(sub[0], sub[1], pool, lu, l1,
                                                    backend="bruteforce"), 1)
    print(f"  mirror_stats  bruteforce {sec * 1e3:10.2f} ms for {k} hypotheses "
          f"({sec / k * 1e6:.0f} us/hyp)")


if __name__ == "__main__":
    main()
