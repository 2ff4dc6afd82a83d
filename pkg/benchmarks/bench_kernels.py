"""Compiled vs NumPy kernels: ensemble prediction and split search.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n-trees 50]

Prints one line per (kernel, backend) with the best-of-``repeat`` time and
the speedup of the compiled backend.
"""

import argparse
import timeit

import numpy as np

from canbench import _kernels
from canbench.candata import SyntheticConfig, generate_synthetic, split_dataset
from canbench.forest import fit_model


def best_time(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def cases(n_trees, n_points):
    splits = split_dataset(generate_synthetic(SyntheticConfig(n=2000)))
    rng = np.random.default_rng(0)
    X = rng.random((n_points, 10))
    out = {}
    for kind in ("RF", "GB"):
        model, _ = fit_model(kind, splits.a, n_trees, seed=0)
        out[f"predict {kind}-{n_trees} x{n_points}"] = \
            lambda b, m=model: m.predict_proba(X, b)
        out[f"predict {kind}-{n_trees} x1"] = lambda b, m=model: m.predict_proba(X[:1], b)
    a = splits.a
    idx = np.arange(len(a), dtype=np.intp)
    feats = np.arange(a.n_features, dtype=np.intp)
    out[f"gini split n={len(a)}"] = lambda b: _kernels.get(b).best_split_gini(
        a.X, a.y, idx, feats, a.n_classes, 1)
    g = rng.normal(size=len(a))
    h = rng.random(len(a)) * 0.25
    out[f"2nd-order split n={len(a)}"] = lambda b: _kernels.get(b).best_split_second_order(
        a.X, g, h, idx, feats, 1.0, 0.0, 1, 1.0)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n-trees", type=int, default=50)
    ap.add_argument("--n-points", type=int, default=200)
    args = ap.parse_args()
    backends = sorted(_kernels.backends())
    print(f"backends: {', '.join(backends)} (default {_kernels.BACKEND})")
    for name, fn in cases(args.n_trees, args.n_points).items():
        fn("python")  # warm caches
        number = max(1, int(0.2 / max(timeit.timeit(lambda: fn("python"), number=1), 1e-6)))
        times = {b: best_time(lambda b=b: fn(b), number, args.repeat) for b in backends}
        line = "  ".join(f"{b}={times[b] * 1e3:9.3f} ms" for b in backends)
        speed = f"  speedup x{times['python'] / times['cython']:.1f}" if "cython" in times else ""
        print(f"{name:<28}{line}{speed}")


if __name__ == "__main__":
    main()
