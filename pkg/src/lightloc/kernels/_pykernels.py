"""Numpy fallback for the compiled kernels (same arithmetic order, chunked to bound memory)."""
import numpy as np

_CHUNK = 1 << 20


def score_hypotheses(R, t, src, dst, threshold):
    R = np.ascontiguousarray(R, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    H, N = R.shape[0], src.shape[0]
    thr2 = threshold * threshold
    counts = np.zeros(H, dtype=np.int64)
    means = np.full(H, np.inf)
    step = max(1, _CHUNK // max(N, 1))
    sx, sy, sz = src[:, 0], src[:, 1], src[:, 2]
    for lo in range(0, H, step):
        r = R[lo:lo + step, :, :, None]
        tt = t[lo:lo + step, :, None]
        rx = r[:, 0, 0] * sx + r[:, 0, 1] * sy + r[:, 0, 2] * sz + tt[:, 0] - dst[:, 0]
        ry = r[:, 1, 0] * sx + r[:, 1, 1] * sy + r[:, 1, 2] * sz + tt[:, 1] - dst[:, 1]
        rz = r[:, 2, 0] * sx + r[:, 2, 1] * sy + r[:, 2, 2] * sz + tt[:, 2] - dst[:, 2]
        r2 = rx * rx + ry * ry + rz * rz
        inl = r2 <= thr2
        n = inl.sum(axis=1)
        acc = np.where(inl, np.sqrt(r2), 0.0).sum(axis=1)
        counts[lo:lo + step] = n
        with np.errstate(divide="ignore", invalid="ignore"):
            means[lo:lo + step] = np.where(n > 0, acc / np.maximum(n, 1), np.inf)
    return counts, means


def assign_nearest(points, centers):
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    N, D = points.shape
    labels = np.empty(N, dtype=np.int64)
    sqd = np.empty(N)
    step = max(1, _CHUNK // max(centers.shape[0], 1))
    for lo in range(0, N, step):
        p = points[lo:lo + step]
        s = np.zeros((p.shape[0], centers.shape[0]))
        for c in range(D):
            diff = p[:, c, None] - centers[None, :, c]
            s = s + diff * diff
        # argmin returns the first minimum, matching the strict < in the compiled loop
        lab = np.argmin(s, axis=1)
        labels[lo:lo + step] = lab
        sqd[lo:lo + step] = s[np.arange(p.shape[0]), lab]
    return labels, sqd
