"""Time the compiled geometry kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--points N] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from viewfuse3d import _pykernels

try:
    from viewfuse3d import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(n_points: int, rng: np.random.Generator):
    pts = rng.uniform(0.0, 4.0, size=(n_points, 3))
    centers = np.arange(0, n_points, max(1, n_points // 256), dtype=np.int64)
    m = n_points * 4
    px = rng.integers(0, 64, m).astype(np.int64)
    py = rng.integers(0, 64, m).astype(np.int64)
    depth = rng.uniform(0.5, 5.0, m)
    colors = rng.uniform(0, 1, (m, 3)).astype(np.float32)
    return {
        "farthest_point_sample": lambda k: k.farthest_point_sample(pts, 256),
        "knn_mean_offsets": lambda k: k.knn_mean_offsets(pts, centers, 8),
        "splat_zbuffer": lambda k: k.splat_zbuffer(px, py, depth, colors, 64, 64, 1),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=4096)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _cases(args.points, np.random.default_rng(0))
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases.items():
        py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<24}{py:>12.2f}{'n/a':>12}{'':>10}")
            continue
        cy = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<24}{py:>12.2f}{cy:>12.2f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()
