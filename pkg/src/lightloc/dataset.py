"""On-disk scene layout: pose text files plus one float32 point binary per frame.

    <dir>/train_poses.txt, <dir>/test_poses.txt   timestamp tx ty tz qw qx qy qz
    <dir>/points/<split>_<id:05d>.bin              float32 xyz, sensor frame
    <dir>/aliasing.json                            aliased frame pairs
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import MissingArtifact
from .geometry import read_points, read_poses, write_points, write_poses
from .scene import SyntheticScene, TrainingSample

SPLITS = ("train", "test")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _points_name(split: str, fid: int) -> str:
    return f"points/{split}_{fid:05d}.bin"


def write_scene(directory, scene: SyntheticScene) -> list[str]:
    """Write every frame; returns the written file names relative to ``directory``."""
    d = Path(directory)
    (d / "points").mkdir(parents=True, exist_ok=True)
    written = []
    for split, frames in (("train", scene.frames), ("test", scene.test_frames)):
        write_poses(d / f"{split}_poses.txt", [f.id for f in frames], [f.pose for f in frames])
        written.append(f"{split}_poses.txt")
        for f in frames:
            write_points(d / _points_name(split, f.id), f.points)
            written.append(_points_name(split, f.id))
    pairs = [{"source_frame": p.source_frame, "copy_frame": p.copy_frame} for p in scene.alias_pairs]
    (d / "aliasing.json").write_text(json.dumps(pairs, indent=1) + "\n")
    written.append("aliasing.json")
    return written


def load_frames(directory, split: str) -> list[TrainingSample]:
    """Frames as stored on disk (points are float32-rounded)."""
    d = Path(directory)
    pose_file = d / f"{split}_poses.txt"
    if not pose_file.exists():
        raise MissingArtifact(str(pose_file))
    stamps, poses = read_poses(pose_file)
    frames = []
    for stamp, pose in zip(stamps, poses):
        fid = int(stamp)
        path = d / _points_name(split, fid)
        if not path.exists():
            raise MissingArtifact(str(path))
        pts = read_points(path)
        frames.append(TrainingSample(fid, pts, pose, np.full(len(pts), -1), split))
    return frames


def load_alias_pairs(directory) -> list[tuple[int, int]]:
    path = Path(directory) / "aliasing.json"
    if not path.exists():
        return []
    return [(p["source_frame"], p["copy_frame"]) for p in json.loads(path.read_text())]
