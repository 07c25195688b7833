# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels: farthest point sampling, kNN offsets, z-buffer splatting."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def farthest_point_sample(double[:, ::1] points, Py_ssize_t n_samples):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t k = n if n < n_samples else n_samples
    cdef Py_ssize_t i, j, best
    cdef double cx = 0.0, cy = 0.0, cz = 0.0, dx, dy, dz, d, best_d
    out = np.empty(n_samples, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = out
    mind_arr = np.full(n, INFINITY, dtype=np.float64)
    cdef double[::1] mind = mind_arr

    for i in range(n):
        cx += points[i, 0]
        cy += points[i, 1]
        cz += points[i, 2]
    cx /= n
    cy /= n
    cz /= n

    best = 0
    best_d = -1.0
    for i in range(n):
        dx = points[i, 0] - cx
        dy = points[i, 1] - cy
        dz = points[i, 2] - cz
        d = dx * dx + dy * dy + dz * dz
        if d > best_d:
            best_d = d
            best = i
    idx[0] = best

    for j in range(1, k):
        best = 0
        best_d = -1.0
        for i in range(n):
            dx = points[i, 0] - points[idx[j - 1], 0]
            dy = points[i, 1] - points[idx[j - 1], 1]
            dz = points[i, 2] - points[idx[j - 1], 2]
            d = dx * dx + dy * dy + dz * dz
            if d < mind[i]:
                mind[i] = d
            if mind[i] > best_d:
                best_d = mind[i]
                best = i
        idx[j] = best

    for j in range(k, n_samples):
        idx[j] = idx[j % k]
    return out


def knn_mean_offsets(double[:, ::1] points, cnp.int64_t[::1] centers, Py_ssize_t k):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = centers.shape[0]
    cdef Py_ssize_t kk = n - 1 if n - 1 < k else k
    cdef Py_ssize_t c, i, a, pos, ci
    cdef double dx, dy, dz, d, sx, sy, sz
    out = np.zeros((m, 3), dtype=np.float64)
    cdef double[:, ::1] res = out
    if kk <= 0:
        return out
    bd_arr = np.empty(kk, dtype=np.float64)
    bi_arr = np.empty(kk, dtype=np.int64)
    cdef double[::1] bd = bd_arr
    cdef cnp.int64_t[::1] bi = bi_arr
    cdef Py_ssize_t filled

    for c in range(m):
        ci = centers[c]
        filled = 0
        for i in range(n):
            if i == ci:
                continue
            dx = points[i, 0] - points[ci, 0]
            dy = points[i, 1] - points[ci, 1]
            dz = points[i, 2] - points[ci, 2]
            d = dx * dx + dy * dy + dz * dz
            if filled == kk and d >= bd[kk - 1]:
                continue
            # insertion into the sorted buffer; equal distances keep the earlier index first
            pos = filled if filled < kk else kk - 1
            while pos > 0 and bd[pos - 1] > d:
                if pos < kk:
                    bd[pos] = bd[pos - 1]
                    bi[pos] = bi[pos - 1]
                pos -= 1
            bd[pos] = d
            bi[pos] = i
            if filled < kk:
                filled += 1
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for a in range(kk):
            sx += points[bi[a], 0] - points[ci, 0]
            sy += points[bi[a], 1] - points[ci, 1]
            sz += points[bi[a], 2] - points[ci, 2]
        res[c, 0] = sx / kk
        res[c, 1] = sy / kk
        res[c, 2] = sz / kk
    return out


def splat_zbuffer(cnp.int64_t[::1] px, cnp.int64_t[::1] py, double[::1] depth,
                  float[:, ::1] colors, Py_ssize_t height, Py_ssize_t width, Py_ssize_t radius):
    cdef Py_ssize_t n = px.shape[0]
    cdef Py_ssize_t i, x, y, ox, oy
    image = np.ones((height, width, 3), dtype=np.float32)
    zbuf_arr = np.full((height, width), INFINITY, dtype=np.float64)
    cdef float[:, :, ::1] img = image
    cdef double[:, ::1] zbuf = zbuf_arr
    for i in range(n):
        for oy in range(-radius, radius + 1):
            y = py[i] + oy
            if y < 0 or y >= height:
                continue
            for ox in range(-radius, radius + 1):
                x = px[i] + ox
                if x < 0 or x >= width:
                    continue
                if depth[i] < zbuf[y, x]:
                    zbuf[y, x] = depth[i]
                    img[y, x, 0] = colors[i, 0]
                    img[y, x, 1] = colors[i, 1]
                    img[y, x, 2] = colors[i, 2]
    return image
