"""Rigid poses, tagged point clouds, localization error metrics and their file formats."""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import FrameMismatch

ORTHO_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class Pose:
    """Sensor-to-world rigid transform: x_world = rotation @ x_sensor + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad pose shapes {R.shape}, {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose has non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            R = orthonormalize(R)
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q_wxyz, t) -> "Pose":
        w, x, y, z = q_wxyz
        return cls(Rotation.from_quat([x, y, z, w]).as_matrix(), t)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with w >= 0."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if w < 0 else q

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __repr__(self):
        return f"Pose(t={np.round(self.translation, 4).tolist()}, q={np.round(self.quaternion(), 4).tolist()})"


def rot_z(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_pose(yaw_deg: float, t=(0.0, 0.0, 0.0)) -> Pose:
    return Pose(rot_z(math.radians(yaw_deg)), t)


def random_pose(rng: np.random.Generator, translation_scale: float = 10.0) -> Pose:
    R = Rotation.random(random_state=rng).as_matrix()
    return Pose(R, rng.uniform(-translation_scale, translation_scale, 3))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


class Frame(enum.Enum):
    SENSOR = "sensor"
    WORLD = "world"


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    frame: Frame = Frame.SENSOR

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self):
        return self.points.shape[0]


def apply(pose: Pose, points: np.ndarray) -> np.ndarray:
    """R @ p + t for every row of an (N, 3) array."""
    return np.asarray(points) @ pose.rotation.T + pose.translation


def transform(pose: Pose, cloud: PointCloud) -> PointCloud:
    """Map a sensor-frame cloud into the world frame."""
    if cloud.frame is not Frame.SENSOR:
        raise FrameMismatch(f"transform expects a sensor-frame cloud, got {cloud.frame.value}")
    return PointCloud(apply(pose, cloud.points), Frame.WORLD)


def to_sensor(pose: Pose, cloud: PointCloud) -> PointCloud:
    """Inverse of :func:`transform`."""
    if cloud.frame is not Frame.WORLD:
        raise FrameMismatch(f"to_sensor expects a world-frame cloud, got {cloud.frame.value}")
    inv = invert(pose)
    return PointCloud(apply(inv, cloud.points), Frame.SENSOR)


@dataclass(frozen=True)
class PoseError:
    position_error: float
    orientation_error: float


def rotation_angle_deg(R: np.ndarray) -> float:
    """Geodesic angle of R in degrees.

    Same value as arccos((tr R - 1) / 2), but computed with atan2 so it stays
    accurate near 0 and 180 degrees where arccos loses half its digits.
    """
    cos = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin = 0.5 * float(np.linalg.norm(axis))
    return math.degrees(math.atan2(sin, cos))


def pose_error(pred: Pose, gt: Pose) -> PoseError:
    return PoseError(
        float(np.linalg.norm(pred.translation - gt.translation)),
        rotation_angle_deg(pred.rotation.T @ gt.rotation),
    )


# --- file formats -----------------------------------------------------------

_SPLIT = re.compile(r"[,\s]+")


def read_poses(path) -> tuple[np.ndarray, list[Pose]]:
    """Read ``timestamp tx ty tz qw qx qy qz`` lines (comma or whitespace separated)."""
    stamps, poses = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in _SPLIT.split(line) if v]
        if len(vals) != 8:
            raise ValueError(f"expected 8 fields per pose line, got {len(vals)}: {line!r}")
        stamps.append(vals[0])
        poses.append(Pose.from_quaternion(vals[4:8], vals[1:4]))
    return np.array(stamps), poses


def write_poses(path, stamps, poses) -> None:
    lines = []
    for ts, p in zip(stamps, poses):
        vals = [ts, *p.translation, *p.quaternion()]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 3:
        raise ValueError(f"{path}: float count {raw.size} is not a multiple of 3")
    return raw.reshape(-1, 3).astype(np.float64)


def write_points(path, points: np.ndarray) -> None:
    np.asarray(points, dtype="<f4").reshape(-1, 3).tofile(path)
