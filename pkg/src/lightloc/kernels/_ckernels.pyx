# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Arithmetic order mirrors ``_pykernels`` so both backends agree bit for bit."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def score_hypotheses(const double[:, :, ::1] R, const double[:, ::1] t,
                     const double[:, ::1] src, const double[:, ::1] dst, double threshold):
    cdef Py_ssize_t H = R.shape[0], N = src.shape[0], h, i
    cdef double thr2 = threshold * threshold
    cdef double rx, ry, rz, r2, acc, sx, sy, sz
    cdef long n
    counts = np.zeros(H, dtype=np.int64)
    means = np.empty(H, dtype=np.float64)
    cdef long long[::1] cv = counts
    cdef double[::1] mv = means
    with nogil:
        for h in range(H):
            n = 0
            acc = 0.0
            for i in range(N):
                sx = src[i, 0]
                sy = src[i, 1]
                sz = src[i, 2]
                rx = R[h, 0, 0] * sx + R[h, 0, 1] * sy + R[h, 0, 2] * sz + t[h, 0] - dst[i, 0]
                ry = R[h, 1, 0] * sx + R[h, 1, 1] * sy + R[h, 1, 2] * sz + t[h, 1] - dst[i, 1]
                rz = R[h, 2, 0] * sx + R[h, 2, 1] * sy + R[h, 2, 2] * sz + t[h, 2] - dst[i, 2]
                r2 = rx * rx + ry * ry + rz * rz
                if r2 <= thr2:
                    n += 1
                    acc += sqrt(r2)
            cv[h] = n
            mv[h] = acc / n if n > 0 else INFINITY
    return counts, means


def assign_nearest(const double[:, ::1] points, const double[:, ::1] centers):
    cdef Py_ssize_t N = points.shape[0], K = centers.shape[0], D = points.shape[1]
    cdef Py_ssize_t i, j, c, best
    cdef double s, diff, bestd
    labels = np.empty(N, dtype=np.int64)
    sqd = np.empty(N, dtype=np.float64)
    cdef long long[::1] lv = labels
    cdef double[::1] dv = sqd
    with nogil:
        for i in range(N):
            best = 0
            bestd = INFINITY
            for j in range(K):
                s = 0.0
                for c in range(D):
                    diff = points[i, c] - centers[j, c]
                    s = s + diff * diff
                if s < bestd:
                    bestd = s
                    best = j
            lv[i] = best
            dv[i] = bestd
    return labels, sqd
