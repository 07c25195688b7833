"""Backend selection for the geometry kernels.

The compiled extension is used when it imports; otherwise (or when
``VIEWFUSE3D_PURE_PYTHON=1``) the numpy implementation is used. Both share the
same signatures and tie-breaking rules.
"""

import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("VIEWFUSE3D_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels


def farthest_point_sample(points: np.ndarray, n_samples: int) -> np.ndarray:
    """Indices of ``n_samples`` farthest-point-sampled points.

    The first pick is the point farthest from the centroid; later picks
    maximise the distance to the chosen set, lowest index winning ties. With
    fewer than ``n_samples`` points the pick sequence repeats cyclically.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
        raise ValueError(f"expected non-empty (N, 3) points, got {points.shape}")
    return _impl.farthest_point_sample(points, int(n_samples))


def knn_mean_offsets(points: np.ndarray, centers: np.ndarray, k: int = 8) -> np.ndarray:
    """Mean offset from each center to its ``k`` nearest other points."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.int64)
    return _impl.knn_mean_offsets(points, centers, int(k))


def splat_zbuffer(px, py, depth, colors, height: int, width: int, radius: int = 1) -> np.ndarray:
    """Z-buffered square splats on a white background; returns (H, W, 3) float32."""
    return _impl.splat_zbuffer(
        np.ascontiguousarray(px, dtype=np.int64),
        np.ascontiguousarray(py, dtype=np.int64),
        np.ascontiguousarray(depth, dtype=np.float64),
        np.ascontiguousarray(colors, dtype=np.float32),
        int(height),
        int(width),
        int(radius),
    )
