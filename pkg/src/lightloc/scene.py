"""Synthetic LiDAR scenes and the frozen feature backbone used in place of a pretrained network.

A scene is a field of small rigid landmark objects (a few points each) around a
trajectory. A frame observes every object whose center lies within sensor range.
Aliasing copies whole neighborhoods to a second place on the loop, so some
frames contain geometry that is identical to what another frame sees elsewhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidSpec
from .geometry import Frame, PointCloud, Pose, apply, invert, rot_z


@dataclass(frozen=True)
class SceneSpec:
    layout: str = "loop"  # "loop" or "blobs"
    loop_length: float = 200.0
    n_frames: int = 500
    n_test_frames: int = 100
    object_density: float = 0.04  # objects per m^2 inside the landmark band
    band: tuple[float, float] = (3.0, 14.0)  # lateral distance of objects from the path
    min_object_separation: float = 3.5
    points_per_object: int = 8
    object_extent: tuple[float, float] = (0.8, 1.2)  # horizontal box, height
    sensor_range: float = 20.0
    sensor_noise: float = 0.0
    aliasing: int = 0
    alias_offset: float = 25.0
    alias_length: float = 12.0
    test_lateral: float = 0.5
    test_yaw_deg: float = 5.0
    blob_centers: tuple = ((0.0, 0.0), (45.0, 0.0), (200.0, 0.0), (245.0, 0.0))
    blob_sigma: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_frames <= 0:
            raise InvalidSpec("n_frames must be positive")
        if self.n_test_frames < 0:
            raise InvalidSpec("n_test_frames must be non-negative")
        if self.layout not in ("loop", "blobs"):
            raise InvalidSpec(f"unknown layout {self.layout!r}")
        if self.loop_length <= 0 or self.object_density <= 0 or self.sensor_range <= 0:
            raise InvalidSpec("loop length, landmark density and sensor range must be positive")
        if self.points_per_object < 6:
            raise InvalidSpec("objects need at least 6 points for the local descriptor")
        if self.band[0] <= 0 or self.band[1] <= self.band[0]:
            raise InvalidSpec("band must satisfy 0 < inner < outer")
        if self.layout == "loop":
            radius = self.loop_length / (2 * math.pi)
            if self.band[1] >= radius:
                raise InvalidSpec("landmark band reaches the loop center")
            if self.aliasing:
                if self.aliasing < 0:
                    raise InvalidSpec("aliasing must be non-negative")
                period = self.loop_length / self.aliasing
                if self.alias_offset + self.alias_length + 2 * self.min_object_separation > period:
                    raise InvalidSpec("aliased regions overlap; reduce aliasing count or region length")
                if self.alias_offset < self.alias_length + 2 * self.min_object_separation:
                    raise InvalidSpec("alias copy overlaps its source region")


@dataclass
class TrainingSample:
    id: int
    points: np.ndarray  # (N, 3) sensor frame
    pose: Pose
    landmark_ids: np.ndarray  # (N,) object id per point
    split: str = "train"

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.points, Frame.SENSOR)

    @property
    def world_points(self) -> np.ndarray:
        return apply(self.pose, self.points)

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation


@dataclass
class AliasPair:
    source_frame: int
    copy_frame: int
    source_objects: np.ndarray
    copy_objects: np.ndarray


@dataclass
class SyntheticScene:
    spec: SceneSpec
    objects: np.ndarray  # (n_objects, P, 3) world coordinates
    frames: list[TrainingSample]
    test_frames: list[TrainingSample]
    alias_pairs: list[AliasPair] = field(default_factory=list)

    @property
    def trajectory(self) -> list[Pose]:
        return [f.pose for f in self.frames]

    @property
    def aliasing_factor(self) -> int:
        return len(self.alias_pairs)

    @property
    def positions(self) -> np.ndarray:
        return np.array([f.position for f in self.frames])


def _object_shape(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    w, h = spec.object_extent
    while True:
        pts = np.column_stack([rng.uniform(-w / 2, w / 2, (spec.points_per_object, 2)),
                               rng.uniform(0.0, h, spec.points_per_object)])
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        if d[np.triu_indices(len(pts), 1)].min() > 0.1:
            return pts


def _dart_throw(rng, sample_fn, n_target, min_sep, max_tries_factor=30):
    centers = []
    tree_pts = np.empty((0, 2))
    tries = 0
    while len(centers) < n_target and tries < n_target * max_tries_factor:
        tries += 1
        c = sample_fn()
        if tree_pts.shape[0] and np.min(np.sum((tree_pts - c) ** 2, axis=1)) < min_sep ** 2:
            continue
        centers.append(c)
        tree_pts = np.vstack([tree_pts, c])
    return np.array(centers)


def _loop_objects(spec: SceneSpec, rng):
    R = spec.loop_length / (2 * math.pi)
    r_lo, r_hi = spec.band
    area = math.pi * ((R + r_hi) ** 2 - (R + r_lo) ** 2 + (R - r_lo) ** 2 - (R - r_hi) ** 2)
    n_target = int(round(spec.object_density * area))

    def sample():
        phi = rng.uniform(0, 2 * math.pi)
        side = 1.0 if rng.random() < 0.5 else -1.0
        rad = R + side * rng.uniform(r_lo, r_hi)
        return np.array([rad * math.cos(phi), rad * math.sin(phi)])

    centers = _dart_throw(rng, sample, n_target, spec.min_object_separation)
    return centers


def _blob_objects(spec: SceneSpec, rng):
    blobs = np.asarray(spec.blob_centers, dtype=np.float64)
    reach = 3 * spec.blob_sigma + spec.sensor_range + 2.0
    area = len(blobs) * math.pi * reach ** 2
    n_target = int(round(spec.object_density * area))

    def sample():
        b = blobs[rng.integers(len(blobs))]
        r = reach * math.sqrt(rng.random())
        a = rng.uniform(0, 2 * math.pi)
        return b + r * np.array([math.cos(a), math.sin(a)])

    return _dart_throw(rng, sample, n_target, spec.min_object_separation)


def _place(shape, center_xy, yaw):
    return shape @ rot_z(yaw).T + np.array([center_xy[0], center_xy[1], 0.0])


def _observe(objects, centers_xy, pose: Pose, spec: SceneSpec, rng, frame_id, split):
    d = np.linalg.norm(centers_xy - pose.translation[:2], axis=1)
    vis = np.flatnonzero(d <= spec.sensor_range)
    world = objects[vis].reshape(-1, 3)
    ids = np.repeat(vis, objects.shape[1])
    pts = apply(invert(pose), world)
    if spec.sensor_noise > 0:
        pts = pts + rng.normal(0.0, spec.sensor_noise, pts.shape)
    return TrainingSample(frame_id, pts, pose, ids, split)


def _loop_pose(R, phi, lateral=0.0, yaw_offset=0.0) -> Pose:
    rad = R + lateral
    return Pose(rot_z(phi + math.pi / 2 + yaw_offset), [rad * math.cos(phi), rad * math.sin(phi), 0.0])


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Deterministic synthetic scene for ``spec.seed``."""
    spec.validate()
    ss = np.random.SeedSequence(spec.seed)
    s_obj, s_shape, s_traj, s_noise = ss.spawn(4)
    rng_obj = np.random.default_rng(s_obj)
    rng_shape = np.random.default_rng(s_shape)
    rng_traj = np.random.default_rng(s_traj)
    rng_noise = np.random.default_rng(s_noise)

    centers = _loop_objects(spec, rng_obj) if spec.layout == "loop" else _blob_objects(spec, rng_obj)
    shapes = [_object_shape(rng_shape, spec) for _ in range(len(centers))]
    yaws = rng_shape.uniform(0, 2 * math.pi, len(centers))
    objects = np.stack([_place(s, c, y) for s, c, y in zip(shapes, centers, yaws)])

    alias_pairs = []
    if spec.layout == "loop":
        R = spec.loop_length / (2 * math.pi)
        n = spec.n_frames
        train_poses = [_loop_pose(R, 2 * math.pi * i / n) for i in range(n)]
        m = spec.n_test_frames
        test_poses = [
            _loop_pose(R, 2 * math.pi * (j + 0.5) / max(m, 1),
                       rng_traj.uniform(-spec.test_lateral, spec.test_lateral),
                       math.radians(rng_traj.uniform(-spec.test_yaw_deg, spec.test_yaw_deg)))
            for j in range(m)
        ]
        if spec.aliasing:
            objects, centers, alias_pairs = _apply_aliasing(spec, objects, centers, R)
    else:
        blobs = np.asarray(spec.blob_centers, dtype=np.float64)

        def blob_poses(count):
            out = []
            for i in range(count):
                b = blobs[i % len(blobs)]
                xy = b + rng_traj.normal(0.0, spec.blob_sigma, 2)
                out.append(Pose(rot_z(rng_traj.uniform(0, 2 * math.pi)), [xy[0], xy[1], 0.0]))
            return out

        train_poses = blob_poses(spec.n_frames)
        test_poses = blob_poses(spec.n_test_frames)

    centers_xy = objects.mean(axis=1)[:, :2]
    frames = [_observe(objects, centers_xy, p, spec, rng_noise, i, "train") for i, p in enumerate(train_poses)]
    tests = [_observe(objects, centers_xy, p, spec, rng_noise, i, "test") for i, p in enumerate(test_poses)]
    for f in frames + tests:
        if f.points.shape[0] < 3:
            raise InvalidSpec(f"{f.split} frame {f.id} observes fewer than 3 points; raise density or range")
    return SyntheticScene(spec, objects, frames, tests, alias_pairs)


def _apply_aliasing(spec: SceneSpec, objects, centers, R):
    """Copy ``spec.aliasing`` arc regions forward by ``alias_offset`` (snapped to the frame grid)."""
    n = spec.n_frames
    step = spec.loop_length / n
    off_frames = int(round(spec.alias_offset / step))
    delta = 2 * math.pi * off_frames / n
    obj_center = objects.mean(axis=1)[:, :2]
    phi = np.mod(np.arctan2(obj_center[:, 1], obj_center[:, 0]), 2 * math.pi)
    period = spec.loop_length / spec.aliasing
    rot = rot_z(delta)
    regions = []
    for j in range(spec.aliasing):
        a0 = 2 * math.pi * (j * period) / spec.loop_length
        a1 = a0 + 2 * math.pi * spec.alias_length / spec.loop_length
        regions.append((np.flatnonzero((phi >= a0) & (phi < a1)), a0, a1))
    copy_xy = np.vstack([obj_center[src] @ rot[:2, :2].T for src, _, _ in regions])
    # drop originals inside a copy window or too close to any copy
    keep = np.ones(len(objects), dtype=bool)
    for _, a0, a1 in regions:
        keep &= ~((phi >= a0 + delta) & (phi < a1 + delta))
    near = cKDTree(copy_xy).query(obj_center, k=1)[0] < spec.min_object_separation
    keep &= ~near
    for src, _, _ in regions:
        if not keep[src].all():
            raise InvalidSpec("aliased source region collides with another copy")
    new_objects = [objects[keep]]
    kept_index = np.cumsum(keep) - 1
    next_id = int(keep.sum())
    alias_pairs = []
    for src, a0, a1 in regions:
        new_objects.append(objects[src] @ rot.T)
        copy_ids = np.arange(next_id, next_id + len(src))
        next_id += len(src)
        mid = 0.5 * (a0 + a1)
        src_frame = int(round(mid / (2 * math.pi) * n)) % n
        alias_pairs.append(AliasPair(src_frame, (src_frame + off_frames) % n, kept_index[src], copy_ids))
    objects = np.concatenate(new_objects)
    return objects, objects.mean(axis=1)[:, :2], alias_pairs


# --- frozen backbone ----------------------------------------------------------


DESCRIPTOR_DIM = 9


@dataclass(frozen=True)
class FrozenBackbone:
    """Fixed random two-layer ReLU projection of rigid-invariant local descriptors.

    The descriptor of a point uses its ``k`` nearest neighbors in the scan:
    sorted neighbor distances, distance to the neighborhood centroid and the
    covariance eigenvalues. It never changes after construction.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    k: int = 5
    desc_center: tuple = (0.31, 0.42, 0.52, 0.61, 0.69, 0.32, 0.10, 0.18, 0.28)
    desc_scale: tuple = (0.13, 0.14, 0.13, 0.14, 0.14, 0.13, 0.04, 0.04, 0.05)

    @property
    def width(self) -> int:
        return self.w2.shape[1]


def make_backbone(width: int = 64, hidden: int = 128, seed: int = 0) -> FrozenBackbone:
    """Backbone for the default landmark geometry (descriptor statistics are fixed constants)."""
    rng = np.random.default_rng(seed)
    d = DESCRIPTOR_DIM
    w1 = rng.normal(0.0, 1.0 / math.sqrt(d), (d, hidden))
    b1 = rng.normal(0.0, 0.5, hidden)
    w2 = rng.normal(0.0, math.sqrt(2.0 / hidden), (hidden, width))
    b2 = rng.normal(0.0, 0.1, width)
    for a in (w1, b1, w2, b2):
        a.setflags(write=False)
    return FrozenBackbone(w1, b1, w2, b2)


def local_descriptors(points: np.ndarray, k: int = 5) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    kk = min(k, n - 1)
    if kk < 1:
        raise ValueError("need at least two points for local descriptors")
    dist, idx = cKDTree(pts).query(pts, k=kk + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]
    if kk < k:
        dist = np.pad(dist, ((0, 0), (0, k - kk)), mode="edge")
    nb = np.concatenate([pts[:, None, :], pts[idx]], axis=1)
    cen = nb.mean(axis=1)
    dc = np.linalg.norm(pts - cen, axis=1)
    cov = np.einsum("nki,nkj->nij", nb - cen[:, None], nb - cen[:, None]) / nb.shape[1]
    ev = np.sqrt(np.clip(np.linalg.eigvalsh(cov), 0.0, None))
    return np.column_stack([dist, dc, ev])


def backbone_features(backbone: FrozenBackbone, frame) -> tuple[np.ndarray, np.ndarray]:
    """Per-point dense features (N, width) and the max-pooled global feature (width,)."""
    pts = frame.points if hasattr(frame, "points") else np.asarray(frame)
    if len(pts) == 0:
        raise ValueError("empty frame")
    desc = (local_descriptors(pts, backbone.k) - np.asarray(backbone.desc_center)) / np.asarray(backbone.desc_scale)
    h = np.maximum(desc @ backbone.w1 + backbone.b1, 0.0)
    dense = np.maximum(h @ backbone.w2 + backbone.b2, 0.0)
    return dense, dense.max(axis=0)
