"""Rigid pose estimation from 3D-3D correspondences: Kabsch fit inside RANSAC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateGeometry, FrameMismatch, InvalidConfig, LengthMismatch, NoConsensus
from .geometry import Frame, PointCloud, Pose, apply

DEGENERACY_RATIO = 1e-12


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 1024
    inlier_threshold: float = 0.25
    min_inlier_fraction: float = 0.1
    seed: int = 0
    refit_on_inliers: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidConfig("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise InvalidConfig("inlier_threshold must be positive")
        if not 0 < self.min_inlier_fraction <= 1:
            raise InvalidConfig("min_inlier_fraction must lie in (0, 1]")


def _as_pairs(src, dst):
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape:
        raise LengthMismatch(f"{src.shape} vs {dst.shape}")
    if src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"correspondences must be (N, 3), got {src.shape}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("non-finite correspondence")
    return src, dst


def rigid_fit(src, dst) -> Pose:
    """Least-squares rigid transform with ``dst ~ R @ src + t`` (Kabsch).

    Raises DegenerateGeometry for fewer than 3 pairs or (near) collinear sensor points.
    """
    src, dst = _as_pairs(src, dst)
    if src.shape[0] < 3:
        raise DegenerateGeometry(f"need >= 3 pairs, got {src.shape[0]}")
    ca, cb = src.mean(axis=0), dst.mean(axis=0)
    A, B = src - ca, dst - cb
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0 or s[1] < DEGENERACY_RATIO * s[0]:
        raise DegenerateGeometry("correspondences are collinear or coincident")
    U, _, Vt = np.linalg.svd(A.T @ B)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(R, cb - R @ ca)


def _batch_minimal_fits(src, dst, idx):
    """Kabsch on many 3-point samples at once. Returns R, t, and a validity mask."""
    a = src[idx]  # (H, 3, 3)
    b = dst[idx]
    ca, cb = a.mean(axis=1), b.mean(axis=1)
    A, B = a - ca[:, None], b - cb[:, None]
    sv = np.linalg.svd(A, compute_uv=False)
    valid = (sv[:, 0] > 0) & (sv[:, 1] >= DEGENERACY_RATIO * sv[:, 0])
    H = np.einsum("hni,hnj->hij", A, B)
    U, _, Vt = np.linalg.svd(H)
    V = np.transpose(Vt, (0, 2, 1))
    d = np.sign(np.linalg.det(V @ np.transpose(U, (0, 2, 1))))
    d[d == 0] = 1.0
    D = np.zeros((len(idx), 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ np.transpose(U, (0, 2, 1))
    t = cb - np.einsum("hij,hj->hi", R, ca)
    return np.ascontiguousarray(R), np.ascontiguousarray(t), valid


def _sample_triples(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    # three distinct indices per row, drawn without replacement
    keys = rng.random((count, n)) if n <= 64 else None
    if keys is not None:
        return np.argsort(keys, axis=1)[:, :3]
    i = rng.integers(0, n, count)
    j = rng.integers(0, n - 1, count)
    j = j + (j >= i)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k = rng.integers(0, n - 2, count)
    k = k + (k >= lo)
    k = k + (k >= hi)
    return np.stack([i, j, k], axis=1)


def residuals(pose: Pose, src, dst) -> np.ndarray:
    return np.linalg.norm(apply(pose, src) - dst, axis=1)


def _inlier_mask(pose: Pose, src, dst, threshold):
    r = apply(pose, src) - dst
    r2 = np.einsum("ij,ij->i", r, r)
    return r2 <= threshold * threshold


@dataclass
class RansacResult:
    pose: Pose
    inlier_mask: np.ndarray
    inlier_count: int
    iterations_used: int


def ransac_pose(src, dst, params: RansacParams = RansacParams()) -> RansacResult:
    """Robust rigid pose from correspondences.

    Every iteration draws one minimal sample; degenerate samples are discarded but
    still consume the iteration budget. The best hypothesis maximizes the inlier
    count, ties broken by the lower mean inlier residual and then by draw order.
    """
    src, dst = _as_pairs(src, dst)
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometry(f"need >= 3 pairs, got {n}")
    rng = np.random.default_rng(params.seed)
    idx = _sample_triples(rng, n, params.max_iterations)
    R, t, valid = _batch_minimal_fits(src, dst, idx)
    if not valid.any():
        raise NoConsensus("every minimal sample was degenerate")
    R, t = R[valid], t[valid]
    counts, means = kernels.score_hypotheses(R, t, src, dst, float(params.inlier_threshold))
    order = np.lexsort((np.arange(len(counts)), means, -counts))
    best = order[0]
    if counts[best] < 3 or counts[best] < params.min_inlier_fraction * n:
        raise NoConsensus(f"best hypothesis has {counts[best]}/{n} inliers")
    pose = Pose(R[best], t[best])
    mask = _inlier_mask(pose, src, dst, params.inlier_threshold)
    if params.refit_on_inliers and mask.sum() >= 3:
        try:
            pose = rigid_fit(src[mask], dst[mask])
            mask = _inlier_mask(pose, src, dst, params.inlier_threshold)
        except DegenerateGeometry:
            pass
    return RansacResult(pose, mask, int(mask.sum()), params.max_iterations)


@dataclass
class Localization:
    pose: Pose
    inlier_mask: np.ndarray
    inlier_count: int
    mean_inlier_residual: float
    median_inlier_residual: float


def localize(predicted_world: PointCloud, sensor_points: PointCloud,
             params: RansacParams = RansacParams()) -> Localization:
    """Pose of a scan from its regressed world coordinates."""
    if sensor_points.frame is not Frame.SENSOR:
        raise FrameMismatch("sensor_points must be in the sensor frame")
    if predicted_world.frame is not Frame.WORLD:
        raise FrameMismatch("predicted_world must be in the world frame")
    if len(predicted_world) != len(sensor_points):
        raise LengthMismatch(f"{len(predicted_world)} predictions for {len(sensor_points)} points")
    res = ransac_pose(sensor_points.points, predicted_world.points, params)
    r = residuals(res.pose, sensor_points.points[res.inlier_mask], predicted_world.points[res.inlier_mask])
    return Localization(
        res.pose, res.inlier_mask, res.inlier_count,
        float(r.mean()) if r.size else float("nan"),
        float(np.median(r)) if r.size else float("nan"),
    )
