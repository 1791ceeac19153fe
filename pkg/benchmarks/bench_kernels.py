"""Compare the compiled kernels with the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json FILE]

Each workload runs on identical inputs under both backends; the table shows
the best-of-N wall time per call, the speedup, and the largest relative
difference between the two results. A final row times ``rbrm plan`` on the
bundled two-sensor scenario end to end in a subprocess per backend.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
import timeit

import numpy as np

from rbrm import kernels
from rbrm.bounds import make_step_params, pack_steps
from rbrm.simulate import _subset_sums


def _random_psd(rng, n, rank=None):
    g = rng.normal(size=(n, n if rank is None else rank))
    return g @ g.T


def _packed(rng, k, max_m, n=2):
    steps = []
    for _ in range(k):
        m = int(rng.integers(0, max_m + 1))
        steps.append(make_step_params(rng.uniform(0.9, 1.1), rng.uniform(0, 0.01), rng.uniform(size=m),
                                      [_random_psd(rng, n, rank=1) for _ in range(m)], n=n))
    return pack_steps(steps)


def workloads(rng):
    """name -> callable(backend module) returning a comparable result."""
    ps = _packed(rng, 300, 5)
    fold_args = (ps.a, ps.b, ps.m, ps.p_flat, ps.p_off, ps.c_flat, ps.d_flat, ps.cd_off)
    out_buf = np.empty(len(ps) + 1)

    def fold(variant):
        return lambda k: k.fold_bound(0.01, *fold_args, variant, out_buf.copy())

    m = 10
    p = rng.uniform(size=m)
    c = np.concatenate(([0.0], rng.uniform(0, 5, size=(1 << m) - 1)))
    d = 0.01 * c / 1.05 + 1

    k_cov, n = 300, 2
    F = np.eye(n) + 0.01 * rng.normal(size=(k_cov, n, n))
    Q = np.array([1e-3 * np.eye(n)] * k_cov)
    M = np.array([_random_psd(rng, n, rank=1) for _ in range(k_cov)])
    P0 = 0.01 * np.eye(n)

    T, m_exact = 8, 2
    W, S = [], []
    for _ in range(T):
        W.append(np.asarray(kernels.get_backend("python").subset_weights(rng.uniform(size=m_exact))))
        S.append(_subset_sums(np.array([_random_psd(rng, n, rank=1) for _ in range(m_exact)]), n))
    n_sub = np.array([len(w) for w in W], dtype=np.int64)
    off = np.zeros(T + 1, dtype=np.int64)
    np.cumsum(n_sub, out=off[1:])
    exact_args = (P0, np.array([np.eye(n)] * T), np.array([1e-3 * np.eye(n)] * T), n_sub,
                  np.concatenate(W), np.concatenate(S), off)

    return {
        "fold_bound stochastic (300 steps, m<=5)": fold(kernels.STOCHASTIC),
        "fold_bound simplified (300 steps, m<=5)": fold(kernels.SIMPLIFIED),
        "fold_bound uniform (300 steps, m<=5)": fold(kernels.UNIFORM),
        "step_value stochastic (m=10)": lambda k: k.step_value(0.01, 1.05, 0.01, p, c, d, kernels.STOCHASTIC),
        "subset_weights (m=12)": lambda k: np.asarray(k.subset_weights(p[:10].tolist() + [0.3, 0.6])),
        "fold_covariance (300 steps, 2x2)": lambda k: k.fold_covariance(P0, F, Q, M),
        "exact_expectation (T=8, m=2, 2^16 patterns)": lambda k: k.exact_expectation(*exact_args),
    }


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 1 << 16:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def rel_diff(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-300, np.abs(b)))) if a.size else 0.0


def end_to_end(repeat):
    cmd = [sys.executable, "-m", "rbrm.cli", "plan", "--scenario", "fig2", "--out", os.devnull]
    times = {}
    for name, env in (("cython", {}), ("python", {"RBRM_PURE_PYTHON": "1"})):
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            subprocess.run(cmd, env=dict(os.environ, **env), check=True, capture_output=True)
            best = min(best, time.perf_counter() - t0)
        times[name] = best
    return times


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results as JSON")
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    if "cython" not in kernels.available_backends():
        print("compiled extension not built; run: python3 setup.py build_ext --inplace", file=sys.stderr)
        return 1
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    rows = []
    for name, fn in workloads(np.random.default_rng(0)).items():
        t_py = best_time(lambda: fn(py), args.repeat)
        t_cy = best_time(lambda: fn(cy), args.repeat)
        rows.append({"workload": name, "python_s": t_py, "cython_s": t_cy, "speedup": t_py / t_cy,
                     "max_rel_diff": rel_diff(fn(cy), fn(py))})
    if not args.skip_end_to_end:
        e2e = end_to_end(max(1, min(args.repeat, 3)))
        rows.append({"workload": "rbrm plan fig2 (subprocess)", "python_s": e2e["python"], "cython_s": e2e["cython"],
                     "speedup": e2e["python"] / e2e["cython"], "max_rel_diff": None})

    w = max(len(r["workload"]) for r in rows)
    print(f"{'workload':<{w}}  {'python':>11}  {'cython':>11}  {'speedup':>8}  {'max rel diff':>12}")
    for r in rows:
        diff = "" if r["max_rel_diff"] is None else f"{r['max_rel_diff']:.1e}"
        print(f"{r['workload']:<{w}}  {r['python_s'] * 1e3:9.3f}ms  {r['cython_s'] * 1e3:9.3f}ms  "
              f"{r['speedup']:7.1f}x  {diff:>12}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
