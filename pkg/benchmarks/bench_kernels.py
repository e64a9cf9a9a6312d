"""Time the compiled kernels against the numpy fallback on identical inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import sys
import timeit

import numpy as np

from hypcog import _fallback

try:
    from hypcog import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    pts2 = rng.standard_normal((800, 2))
    pts2 *= 0.9 * rng.random((800, 1)) / np.linalg.norm(pts2, axis=1, keepdims=True)
    d60 = np.ascontiguousarray(np.linalg.norm(pts2[:60, None] - pts2[None, :60], axis=-1))
    d400 = np.ascontiguousarray(np.linalg.norm(pts2[:400, None] - pts2[None, :400], axis=-1))
    quads = np.ascontiguousarray(np.stack([rng.choice(400, 4, replace=False) for _ in range(50_000)]),
                                 dtype=np.int64)
    layout = np.ascontiguousarray(rng.random((512, 2)) * 8)
    labels = np.arange(800, dtype=np.int64)
    return {
        "poincare_pdist n=800": lambda m: m.poincare_pdist(pts2, 1.0),
        "delta_exact n=60": lambda m: m.delta_exact(d60),
        "delta_quadruples 50k": lambda m: m.delta_quadruples(d400, quads),
        "overlap_energy_grad n=512": lambda m: m.overlap_energy_grad(layout, 0.5),
        "min_pairwise_poincare n=800": lambda m: m.min_pairwise_poincare(pts2, 1.0),
        "crowding_counts n=800": lambda m: m.crowding_counts(pts2, labels, 0.05, 1.0),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write timings here")
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; nothing to compare", file=sys.stderr)
        return 1
    rows = []
    print(f"{'kernel':32s} {'numpy (ms)':>12s} {'cython (ms)':>12s} {'speedup':>9s}")
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        a, b = fn(_fallback), fn(_kernels)
        for x, y in zip(np.atleast_1d(np.asarray(a, dtype=object)), np.atleast_1d(np.asarray(b, dtype=object))):
            np.testing.assert_allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), rtol=1e-9, atol=1e-12)
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": name, "numpy_ms": t_py, "cython_ms": t_cy, "speedup": t_py / t_cy})
        print(f"{name:32s} {t_py:12.2f} {t_cy:12.2f} {t_py / t_cy:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
