"""Scene coordinate regression head: L1 objective, training loop with guidance and pruning, evaluation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rsd
from .errors import InvalidConfig, LengthMismatch, NoConsensus
from .geometry import Frame, PointCloud, pose_error
from .mlp import Mlp, init_mlp, make_optimizer, mlp_backward, mlp_forward, one_cycle_lr
from .scene import FrozenBackbone, backbone_features
from .scg import ClassifierHead, classifier_forward, guidance_features
from .seeds import derive, rng as make_rng
from .serialize import mlp_arrays, mlp_from_arrays, read_bundle, write_bundle
from .solver import RansacParams, localize

HEAD_MAGIC = b"LLRH"
FORMAT_VERSION = 1

STRATEGIES = ("none", "rsd", "random", "uniform")


def l1_scene_loss(pred_world, gt_world):
    """Mean over points of the L1 distance; also returns the per-point values."""
    p = np.asarray(pred_world, dtype=np.float64)
    g = np.asarray(gt_world, dtype=np.float64)
    if p.shape != g.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {g.shape} targets")
    per_point = np.abs(p - g).sum(axis=1)
    return float(per_point.mean()), per_point


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    frames_per_batch: int = 8
    points_per_frame: int = 128
    hidden: int = 128
    depth: int = 3
    lr_min: float = 1e-4
    lr_max: float = 2e-2
    optimizer: str = "adamw"
    weight_decay: float = 1e-2
    scg: bool = True
    sigma: float = 0.1
    guidance_scale: float = 1.0
    standardize: bool = True
    strategy: str = "none"  # none | rsd | random | uniform
    rsd: rsd.RsdConfig = field(default_factory=rsd.RsdConfig)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.frames_per_batch < 1 or self.points_per_frame < 1:
            raise InvalidConfig("epochs, frames_per_batch and points_per_frame must be positive")
        if not (0 < self.lr_min <= self.lr_max):
            raise InvalidConfig("need 0 < lr_min <= lr_max")
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"unknown strategy {self.strategy!r}")
        if self.strategy != "none" and self.rsd.total_epochs != self.epochs:
            raise InvalidConfig("rsd.total_epochs must equal epochs")


@dataclass
class RegressionHead:
    """MLP predicting normalized world coordinates: world = center + scale * output.

    Inputs (dense feature, optionally followed by the guidance vector) are
    standardized column-wise with statistics taken from the training set.
    """

    mlp: Mlp
    center: np.ndarray
    scale: float
    guidance_dim: int = 0
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def inputs(self, dense: np.ndarray, guidance: np.ndarray | None = None) -> np.ndarray:
        x = np.asarray(dense, dtype=np.float64)
        if self.guidance_dim:
            # one frame-level guidance vector, repeated for every point of that frame
            g = np.asarray(guidance, dtype=np.float64)
            if g.ndim == 1:
                g = np.broadcast_to(g, (x.shape[0], self.guidance_dim))
            x = np.concatenate([x, g], axis=1)
        if self.input_mean is not None:
            x = (x - self.input_mean) / self.input_scale
        return x

    def predict(self, dense: np.ndarray, guidance: np.ndarray | None = None) -> np.ndarray:
        return self.center + self.scale * mlp_forward(self.mlp, self.inputs(dense, guidance))

    def save(self, path) -> None:
        meta, arrays = mlp_arrays("mlp", self.mlp)
        meta.update(scale=self.scale, guidance_dim=self.guidance_dim)
        n = self.mlp.in_dim
        mean = np.zeros(n) if self.input_mean is None else self.input_mean
        sc = np.ones(n) if self.input_scale is None else self.input_scale
        write_bundle(path, HEAD_MAGIC, FORMAT_VERSION, meta,
                     arrays + [("center", self.center), ("input_mean", mean), ("input_scale", sc)])

    @classmethod
    def load(cls, path) -> "RegressionHead":
        meta, arr = read_bundle(path, HEAD_MAGIC, FORMAT_VERSION)
        return cls(mlp_from_arrays("mlp", meta, arr), arr["center"], float(meta["scale"]),
                   int(meta["guidance_dim"]), arr["input_mean"], arr["input_scale"])


def init_head(in_dim: int, guidance_dim: int, config: TrainConfig, center, scale) -> RegressionHead:
    sizes = [in_dim + guidance_dim] + [config.hidden] * config.depth + [3]
    skips = [(1, config.depth)] if config.depth >= 3 else []
    mlp = init_mlp(sizes, derive(config.seed, "regressor-init"), skips=skips)
    return RegressionHead(mlp, np.asarray(center, dtype=np.float64), float(scale), guidance_dim)


@dataclass
class FeatureCache:
    dense: list[np.ndarray]
    global_: np.ndarray
    world: list[np.ndarray]


def build_feature_cache(frames, backbone: FrozenBackbone) -> FeatureCache:
    dense, glob, world = [], [], []
    for f in frames:
        d, g = backbone_features(backbone, f)
        dense.append(d)
        glob.append(g)
        world.append(f.world_points)
    return FeatureCache(dense, np.array(glob), world)


def _input_stats(cache: FeatureCache, p1, config: TrainConfig):
    dense = np.vstack(cache.dense)
    mean, std = dense.mean(axis=0), dense.std(axis=0)
    if p1 is not None:
        # noise-free guidance, weighted by each frame's point count
        g = np.repeat(guidance_features(p1, 0.0), [len(d) for d in cache.dense], axis=0)
        mean = np.concatenate([mean, g.mean(axis=0)])
        std = np.concatenate([std, g.std(axis=0) / config.guidance_scale])
    return mean, np.maximum(std, 1e-6)


def frame_probabilities(classifier: ClassifierHead, global_features: np.ndarray) -> np.ndarray:
    p1, _ = classifier_forward(classifier, global_features)
    return p1


@dataclass
class TrainResult:
    head: RegressionHead
    history: list[dict]
    audit: list[dict]
    sample_evaluations: int


class _BaselinePruner:
    """Random or uniform subsets of the same sizes and epochs as the variance-based schedule."""

    def __init__(self, strategy, config: rsd.RsdConfig, ids, rng):
        self.strategy = strategy
        self.config = config
        self.full = sorted(ids)
        self.active = list(self.full)
        self.stages = rsd.stage_epochs(config)
        self.rng = rng
        self.audit = []

    def transition(self, e: int) -> list[int]:
        s = self.config.window
        e1, e2, es = self.stages
        action = rsd.Action.NOOP
        if e in (e1 + s, e2 + s):
            action = rsd.Action.PRUNE
            n = rsd.survivors(len(self.active), self.config.downsample_ratio)
            if self.strategy == "random":
                keep = self.rng.choice(self.active, size=n, replace=False)
            else:
                keep = [self.active[i] for i in np.linspace(0, len(self.active) - 1, n).round().astype(int)]
            self.active = sorted(int(i) for i in keep)
        elif e == es:
            action = rsd.Action.RESTORE_FULL
            self.active = list(self.full)
        self.audit.append({"epoch": e, "action": action.value, "active_size": len(self.active),
                           "min_variance": "", "max_variance": ""})
        return self.active


def planned_active_sizes(config: TrainConfig, n: int) -> list[int]:
    if config.strategy == "none":
        return [n] * config.epochs
    e1, e2, es = rsd.stage_epochs(config.rsd)
    s = config.rsd.window
    n1 = rsd.survivors(n, config.rsd.downsample_ratio)
    n2 = rsd.survivors(n1, config.rsd.downsample_ratio)
    return [n if e < e1 + s else n1 if e < e2 + s else n2 if e < es else n for e in range(config.epochs)]


def train_scr(scene_frames, backbone: FrozenBackbone, classifier: ClassifierHead | None,
              config: TrainConfig = TrainConfig(), cache: FeatureCache | None = None) -> TrainResult:
    """Train the regression head on ``scene_frames`` (list of TrainingSample).

    Per epoch: apply the pruning schedule, shuffle the active frames, and for each
    mini-batch sample ``points_per_frame`` points per frame, concatenate the
    frame's guidance vector (when enabled), take an L1 step, and report each
    frame's median per-point loss to the scheduler.
    """
    frames = list(scene_frames)
    n = len(frames)
    if config.scg and classifier is None:
        raise InvalidConfig("guidance enabled but no classifier given")
    for f in frames:
        if f.points.shape[0] < config.points_per_frame:
            raise InvalidConfig(f"frame {f.id} has {f.points.shape[0]} points < points_per_frame")
    if cache is None:
        cache = build_feature_cache(frames, backbone)
    ids = [f.id for f in frames]
    pos_of = {fid: i for i, fid in enumerate(ids)}

    all_world = np.vstack(cache.world)
    center = all_world.mean(axis=0)
    scale = float(np.sqrt(((all_world - center) ** 2).sum(axis=1).mean()))
    p1 = frame_probabilities(classifier, cache.global_) if config.scg else None
    gdim = p1.shape[1] if config.scg else 0
    head = init_head(cache.dense[0].shape[1], gdim, config, center, scale)
    if config.standardize:
        head.input_mean, head.input_scale = _input_stats(cache, p1, config)
    params = head.mlp.params()
    opt = make_optimizer(config.optimizer, config.weight_decay)

    sizes = planned_active_sizes(config, n)
    total_steps = sum(math.ceil(s / config.frames_per_batch) for s in sizes)
    rng_order = make_rng(config.seed, "order")
    rng_points = make_rng(config.seed, "points")
    rng_noise = make_rng(config.seed, "guidance-noise")

    state = rsd.new_state(config.rsd, ids) if config.strategy == "rsd" else None
    baseline = (_BaselinePruner(config.strategy, config.rsd, ids, make_rng(config.seed, "baseline"))
                if config.strategy in ("random", "uniform") else None)

    history, evaluations, step = [], 0, 0
    for e in range(config.epochs):
        if state is not None:
            rsd.epoch_transition(state, e)
            active = list(state.active_set)
        elif baseline is not None:
            active = list(baseline.transition(e))
        else:
            active = list(ids)
        order = rng_order.permutation(len(active))
        frame_losses = []
        for lo in range(0, len(active), config.frames_per_batch):
            batch = sorted(active[i] for i in order[lo:lo + config.frames_per_batch])
            X, Y, owners = [], [], []
            for fid in batch:
                k = pos_of[fid]
                pick = rng_points.choice(cache.dense[k].shape[0], config.points_per_frame, replace=False)
                dense = cache.dense[k][pick]
                g = guidance_features(p1[k][None], config.sigma, rng_noise)[0] if config.scg else None
                X.append(head.inputs(dense, g))
                Y.append(cache.world[k][pick])
                owners.append(fid)
            X = np.vstack(X)
            Y = np.vstack(Y)
            out, fcache = mlp_forward(head.mlp, X, return_cache=True)
            pred = head.center + head.scale * out
            loss, per_point = l1_scene_loss(pred, Y)
            grad_out = head.scale * np.sign(pred - Y) / X.shape[0]
            grads, _ = mlp_backward(head.mlp, X, grad_out, fcache)
            opt.step(params, grads, one_cycle_lr(step, total_steps, config.lr_min, config.lr_max))
            step += 1
            per_frame = per_point.reshape(len(batch), config.points_per_frame)
            for fid, pl in zip(owners, per_frame):
                if state is not None:
                    rsd.record_median_loss(state, fid, pl)
                frame_losses.append(float(pl.mean()))
        evaluations += len(active)
        history.append({"epoch": e, "mean_loss": float(np.mean(frame_losses)), "active_size": len(active)})
    audit = state.audit if state is not None else (baseline.audit if baseline is not None else [])
    return TrainResult(head, history, audit, evaluations)


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "mean_loss", "active_size"], lineterminator="\n")
        w.writeheader()
        for r in history:
            w.writerow({**r, "mean_loss": repr(r["mean_loss"])})


# --- evaluation ---------------------------------------------------------------


@dataclass
class EvalResult:
    rows: list[dict]
    failures: int

    def _vals(self, key):
        return np.array([r[key] for r in self.rows if r["status"] == "ok"])

    @property
    def median_position(self) -> float:
        v = self._vals("position_error")
        return float(np.median(v)) if v.size else float("nan")

    @property
    def mean_position(self) -> float:
        v = self._vals("position_error")
        return float(np.mean(v)) if v.size else float("nan")

    @property
    def median_orientation(self) -> float:
        v = self._vals("orientation_error")
        return float(np.median(v)) if v.size else float("nan")

    @property
    def mean_orientation(self) -> float:
        v = self._vals("orientation_error")
        return float(np.mean(v)) if v.size else float("nan")


def predict_world(head: RegressionHead, backbone: FrozenBackbone, classifier, frame) -> np.ndarray:
    dense, glob = backbone_features(backbone, frame)
    g = None
    if head.guidance_dim:
        p1, _ = classifier_forward(classifier, glob)
        g = guidance_features(p1[None], 0.0)[0]
    return head.predict(dense, g)


def evaluate(head, backbone: FrozenBackbone, classifier, frames, params: RansacParams = RansacParams(),
             oracle: bool = False, predictions=None) -> EvalResult:
    """Localize every frame and aggregate pose errors; RANSAC failures are counted, not averaged.

    ``oracle=True`` feeds ground-truth world coordinates instead of the head's
    output; ``predictions`` may supply precomputed world coordinates per frame.
    """
    rows, failures = [], 0
    for i, f in enumerate(frames):
        if oracle:
            pred = f.world_points
        elif predictions is not None:
            pred = predictions[i]
        else:
            pred = predict_world(head, backbone, classifier, f)
        try:
            loc = localize(PointCloud(pred, Frame.WORLD), PointCloud(f.points, Frame.SENSOR), params)
        except NoConsensus:
            failures += 1
            rows.append({"frame": f.id, "status": "no_consensus", "position_error": float("nan"),
                         "orientation_error": float("nan"), "inliers": 0, "points": len(f.points)})
            continue
        err = pose_error(loc.pose, f.pose)
        rows.append({"frame": f.id, "status": "ok", "position_error": err.position_error,
                     "orientation_error": err.orientation_error, "inliers": loc.inlier_count,
                     "points": len(f.points)})
    return EvalResult(rows, failures)
