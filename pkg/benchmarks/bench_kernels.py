"""Compare the compiled and numpy boosting kernels on one bit-classifier job.

    python3 benchmarks/bench_kernels.py --rows 2000 --features 16 --rounds 60 --depth 3

Prints wall time per backend, the speedup, and whether both backends grew
the same trees.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from tailcode import boost, kernels


def job(rows: int, features: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(rows, features))
    y = ((x[:, 0] + 0.5 * x[:, 1] * x[:, 2] + 0.3 * rng.normal(size=rows)) > 0).astype(np.float64)
    perm = boost.canonical_order(x, y)
    xt = np.ascontiguousarray(x[perm].T)
    order = np.ascontiguousarray(np.argsort(xt, axis=1, kind="stable").astype(np.intp))
    return x, xt, order, np.ascontiguousarray(y[perm])


def time_backend(mod, args, data, repeats: int):
    x, xt, order, y = data
    best, out = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = mod.fit_trees(xt, order, y, 0.0, args.rounds, args.depth, 0.1, 1.0, 1.0)
        best = min(best, time.perf_counter() - t0)
    t0 = time.perf_counter()
    margin = mod.predict_margin(np.ascontiguousarray(x), out[0], out[1], out[2], 0.0)
    pred_time = time.perf_counter() - t0
    return best, pred_time, out, margin


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--features", type=int, default=16)
    ap.add_argument("--rounds", type=int, default=60)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    data = job(args.rows, args.features, args.seed)
    backends = kernels.available_backends()
    results = {}
    for name, mod in sorted(backends.items()):
        fit_t, pred_t, out, margin = time_backend(mod, args, data, args.repeats)
        results[name] = (fit_t, out, margin)
        print(f"{name:>7}: fit {fit_t * 1e3:9.2f} ms   predict {pred_t * 1e3:8.2f} ms")
    if "cython" in results:
        c, p = results["cython"], results["python"]
        print(f"speedup: {p[0] / c[0]:.1f}x")
        same = np.array_equal(c[1][0], p[1][0]) and np.array_equal(c[1][1], p[1][1])
        print(f"identical tree structure: {same}; "
              f"max leaf diff {np.max(np.abs(c[1][2] - p[1][2])):.2e}; "
              f"max margin diff {np.max(np.abs(c[2] - p[2])):.2e}")
    else:
        print("compiled backend not built; only the numpy fallback ran")


if __name__ == "__main__":
    main()
