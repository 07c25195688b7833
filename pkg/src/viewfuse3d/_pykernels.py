"""Pure numpy versions of the geometry kernels; same tie-breaking as the compiled ones."""

import numpy as np


def _sqdist(points, ref):
    dx = points[..., 0] - ref[..., 0]
    dy = points[..., 1] - ref[..., 1]
    dz = points[..., 2] - ref[..., 2]
    return dx * dx + dy * dy + dz * dz


def farthest_point_sample(points, n_samples):
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    k = min(n, n_samples)
    idx = np.empty(n_samples, dtype=np.int64)
    centroid = points.sum(axis=0) / n
    idx[0] = int(np.argmax(_sqdist(points, centroid)))  # argmax keeps the lowest index on ties
    mind = np.full(n, np.inf)
    for j in range(1, k):
        np.minimum(mind, _sqdist(points, points[idx[j - 1]]), out=mind)
        idx[j] = int(np.argmax(mind))
    for j in range(k, n_samples):
        idx[j] = idx[j % k]
    return idx


def knn_mean_offsets(points, centers, k):
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64)
    n = points.shape[0]
    kk = min(n - 1, k)
    out = np.zeros((centers.shape[0], 3))
    if kk <= 0:
        return out
    d = _sqdist(points[None, :, :], points[centers][:, None, :])
    d[np.arange(centers.shape[0]), centers] = np.inf
    nbr = np.argsort(d, axis=1, kind="stable")[:, :kk]
    off = points[nbr] - points[centers][:, None, :]
    return off.sum(axis=1) / kk


def splat_zbuffer(px, py, depth, colors, height, width, radius):
    px = np.asarray(px, dtype=np.int64)
    py = np.asarray(py, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    image = np.ones((height, width, 3), dtype=np.float32)
    if px.size == 0:
        return image
    offs = np.arange(-radius, radius + 1)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    xs = (px[:, None] + ox.ravel()[None, :]).ravel()
    ys = (py[:, None] + oy.ravel()[None, :]).ravel()
    src = np.repeat(np.arange(px.size), offs.size ** 2)
    ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    xs, ys, src = xs[ok], ys[ok], src[ok]
    if src.size == 0:
        return image
    pix = ys * width + xs
    # nearest depth wins; equal depths resolve to the earliest point
    order = np.lexsort((src, depth[src], pix))
    pix, src = pix[order], src[order]
    first = np.ones(pix.size, dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    flat = image.reshape(-1, 3)
    flat[pix[first]] = np.asarray(colors, dtype=np.float32)[src[first]]
    return image
