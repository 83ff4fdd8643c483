"""Sample classification guidance.

Position clustering (K-Means, two levels), the hierarchical classification head,
label-smoothed cross-entropy, the noisy unit-sphere guidance feature and the
two-level confidence used by the fusion filter.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import MissingArtifact, ShapeMismatch, TooFewSamples, VersionMismatch, ZeroVector
from .mlp import Mlp, init_mlp, make_optimizer, mlp_backward, mlp_forward, one_cycle_lr
from .seeds import as_seed_sequence
from .serialize import mlp_arrays, mlp_from_arrays, read_bundle, write_bundle

PROB_FLOOR = 1e-12
CLUSTER_MAGIC = b"LLCM"
HEAD_MAGIC = b"LLCH"
FORMAT_VERSION = 1


# --- clustering ----------------------------------------------------------------


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float]


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    _, d2 = kernels.assign_nearest(X, X[chosen])
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:  # every remaining point coincides with a center
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        _, dn = kernels.assign_nearest(X, X[[idx]])
        d2 = np.minimum(d2, dn)
    return X[chosen].copy()


def kmeans(positions, k: int, seed=0, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when assignments no longer change or after ``max_iters`` updates. An
    empty cluster is re-seeded at the point farthest from its current center.
    Returned labels are the nearest-center assignments under the returned centers.
    """
    X = np.ascontiguousarray(positions, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("positions must be (N, d)")
    if k < 1:
        raise ValueError("k must be >= 1")
    if X.shape[0] < k:
        raise TooFewSamples(f"{X.shape[0]} positions for k={k}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    labels, d2 = kernels.assign_nearest(X, centers)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                centers[j] = X[far]
                d2[far] = 0.0
        new_labels, d2 = kernels.assign_nearest(X, centers)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(centers, labels, float(d2.sum()), it, history)


@dataclass
class ClusterModel:
    level1_centers: np.ndarray  # (k1, d)
    level2_centers: np.ndarray  # (k1, k2, d)

    @property
    def k1(self) -> int:
        return self.level1_centers.shape[0]

    @property
    def k2(self) -> int:
        return self.level2_centers.shape[1]

    @property
    def dim(self) -> int:
        return self.level1_centers.shape[1]

    @property
    def leaf_centers(self) -> np.ndarray:
        """Flat (k1*k2, d) array; leaf index = level1 * k2 + level2."""
        return self.level2_centers.reshape(-1, self.dim)

    def predict(self, positions) -> np.ndarray:
        X = np.ascontiguousarray(positions, dtype=np.float64)
        l1, _ = kernels.assign_nearest(X, self.level1_centers)
        l2 = np.empty_like(l1)
        for j in range(self.k1):
            m = l1 == j
            if m.any():
                l2[m], _ = kernels.assign_nearest(X[m], np.ascontiguousarray(self.level2_centers[j]))
        return np.stack([l1, l2], axis=1)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CLUSTER_MAGIC)
            fh.write(struct.pack("<HIII", FORMAT_VERSION, self.k1, self.k2, self.dim))
            fh.write(np.ascontiguousarray(self.level1_centers, "<f8").tobytes())
            fh.write(np.ascontiguousarray(self.level2_centers, "<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ClusterModel":
        path = Path(path)
        if not path.exists():
            raise MissingArtifact(str(path))
        data = path.read_bytes()
        if data[:4] != CLUSTER_MAGIC:
            raise VersionMismatch(f"{path}: not a cluster model")
        ver, k1, k2, d = struct.unpack_from("<HIII", data, 4)
        if ver != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: version {ver}")
        off = 4 + 14
        c1 = np.frombuffer(data, "<f8", k1 * d, off).reshape(k1, d)
        c2 = np.frombuffer(data, "<f8", k1 * k2 * d, off + 8 * k1 * d).reshape(k1, k2, d)
        return cls(c1.astype(np.float64), c2.astype(np.float64))


def build_hierarchical_labels(positions, k1: int, k2: int, seed=0, max_iters: int = 100):
    """Two-level K-Means: k1 clusters, then k2 sub-clusters inside each one.

    Returns ``(ClusterModel, labels)`` with labels of shape (N, 2) holding
    (level1, level2) per position.
    """
    X = np.ascontiguousarray(positions, dtype=np.float64)
    ss = as_seed_sequence(seed)
    top_seed, *sub_seeds = ss.spawn(k1 + 1)
    top = kmeans(X, k1, top_seed, max_iters)
    level2 = np.empty((k1, k2, X.shape[1]))
    labels = np.empty((X.shape[0], 2), dtype=np.int64)
    labels[:, 0] = top.labels
    for j in range(k1):
        members = np.flatnonzero(top.labels == j)
        if members.size < k2:
            raise TooFewSamples(f"level-1 cluster {j} has {members.size} members for k2={k2}")
        sub = kmeans(X[members], k2, sub_seeds[j], max_iters)
        level2[j] = sub.centers
        labels[members, 1] = sub.labels
    return ClusterModel(top.centers, level2), labels


# --- losses and probability features ------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def smoothed_targets(labels, k: int, epsilon: float) -> np.ndarray:
    labels = np.atleast_1d(labels)
    q = np.full((labels.shape[0], k), epsilon / k)
    q[np.arange(labels.shape[0]), labels] += 1.0 - epsilon
    return q


def smoothed_ce(pred, label: int, epsilon: float = 0.1) -> float:
    """-sum_i (onehot_i (1 - eps) + eps / k) log p_i, probabilities floored at 1e-12."""
    p = np.asarray(pred, dtype=np.float64)
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    q = smoothed_targets(label, p.shape[-1], epsilon)[0]
    return float(-(q * np.log(np.maximum(p, PROB_FLOOR))).sum())


def guidance_feature(p1, sigma: float, rng=None) -> np.ndarray:
    """Unit-normalize ``p1``, add N(0, sigma^2) per entry, renormalize."""
    return guidance_features(np.asarray(p1, dtype=np.float64)[None], sigma, rng)[0]


def guidance_features(P1: np.ndarray, sigma: float, rng=None) -> np.ndarray:
    """Row-wise :func:`guidance_feature` for a (B, k) batch."""
    P1 = np.asarray(P1, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    v = P1 / np.linalg.norm(P1, axis=1, keepdims=True)
    if sigma > 0:
        rng = np.random.default_rng(rng)
        v = v + rng.normal(0.0, sigma, v.shape)
        n = np.linalg.norm(v, axis=1)
        bad = n < 1e-12
        if bad.any():
            v[bad] = P1[bad] / np.linalg.norm(P1[bad], axis=1, keepdims=True) + rng.normal(0.0, sigma, (bad.sum(), v.shape[1]))
            if (np.linalg.norm(v[bad], axis=1) < 1e-12).any():
                raise ZeroVector("noised guidance vector vanished twice")
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def confidence(p1, p2) -> float:
    return float(np.max(p1) * np.max(p2))


# --- classification head ---------------------------------------------------------


@dataclass
class ClassifierHead:
    """Level-1 MLP, affine modulation generated from p1, level-2 MLP.

    ``feature_mean``/``feature_scale`` standardize the global feature before use.
    """

    level1: Mlp
    level2: Mlp
    scale_w: np.ndarray  # (k1, G)
    scale_b: np.ndarray  # (G,)
    shift_w: np.ndarray  # (k1, G)
    shift_b: np.ndarray  # (G,)
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    history: list = field(default_factory=list)

    @property
    def in_dim(self) -> int:
        return self.level1.in_dim

    @property
    def k1(self) -> int:
        return self.level1.out_dim

    @property
    def k2(self) -> int:
        return self.level2.out_dim

    def params(self) -> list[np.ndarray]:
        return self.level1.params() + [self.scale_w, self.scale_b, self.shift_w, self.shift_b] + self.level2.params()

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.level1.copy(), self.level2.copy(), self.scale_w.copy(), self.scale_b.copy(),
                              self.shift_w.copy(), self.shift_b.copy(), self.feature_mean.copy(),
                              self.feature_scale.copy(), list(self.history))

    def save(self, path) -> None:
        m1, a1 = mlp_arrays("level1", self.level1)
        m2, a2 = mlp_arrays("level2", self.level2)
        arrays = a1 + a2 + [("scale_w", self.scale_w), ("scale_b", self.scale_b), ("shift_w", self.shift_w),
                            ("shift_b", self.shift_b), ("feature_mean", self.feature_mean),
                            ("feature_scale", self.feature_scale)]
        write_bundle(path, HEAD_MAGIC, FORMAT_VERSION, {**m1, **m2, "history": self.history}, arrays)

    @classmethod
    def load(cls, path) -> "ClassifierHead":
        meta, arr = read_bundle(path, HEAD_MAGIC, FORMAT_VERSION)
        return cls(mlp_from_arrays("level1", meta, arr), mlp_from_arrays("level2", meta, arr),
                   arr["scale_w"], arr["scale_b"], arr["shift_w"], arr["shift_b"],
                   arr["feature_mean"], arr["feature_scale"], meta.get("history", []))


def init_classifier(in_dim: int, k1: int, k2: int, hidden: int = 128, seed=0, *, zero=False) -> ClassifierHead:
    ss = as_seed_sequence(seed)
    s1, s2, s3 = ss.spawn(3)
    level1 = init_mlp([in_dim, hidden, k1], s1)
    level2 = init_mlp([in_dim, hidden, k2], s2)
    rng = np.random.default_rng(s3)
    head = ClassifierHead(level1, level2, rng.normal(0, 0.1, (k1, in_dim)), np.ones(in_dim),
                          rng.normal(0, 0.1, (k1, in_dim)), np.zeros(in_dim), np.zeros(in_dim), np.ones(in_dim))
    if zero:
        for p in head.params():
            p[...] = 0.0
    return head


def _check_input(head: ClassifierHead, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None] if single else x
    if X.ndim != 2 or X.shape[1] != head.in_dim:
        raise ShapeMismatch(f"feature width {X.shape[-1]} for head input {head.in_dim}")
    return X, single


def _forward(head: ClassifierHead, X: np.ndarray):
    xn = (X - head.feature_mean) / head.feature_scale
    logits1, c1 = mlp_forward(head.level1, xn, return_cache=True)
    p1 = softmax(logits1)
    scale = p1 @ head.scale_w + head.scale_b
    shift = p1 @ head.shift_w + head.shift_b
    mod = xn * scale + shift
    logits2, c2 = mlp_forward(head.level2, mod, return_cache=True)
    p2 = softmax(logits2)
    return p1, p2, (xn, c1, scale, mod, c2)


def classifier_forward(head: ClassifierHead, global_feature):
    """Level-1 and level-2 class probabilities for one feature vector or a (B, G) batch."""
    X, single = _check_input(head, global_feature)
    p1, p2, _ = _forward(head, X)
    return (p1[0], p2[0]) if single else (p1, p2)


def classifier_loss_and_grads(head: ClassifierHead, X, labels, epsilon: float = 0.1):
    """Mean over the batch of (level-1 + level-2) smoothed cross-entropy, and its gradients.

    Gradients are ordered like ``head.params()``.
    """
    X, _ = _check_input(head, X)
    labels = np.asarray(labels)
    B = X.shape[0]
    p1, p2, (xn, c1, scale, mod, c2) = _forward(head, X)
    q1 = smoothed_targets(labels[:, 0], head.k1, epsilon)
    q2 = smoothed_targets(labels[:, 1], head.k2, epsilon)
    loss = -(q1 * np.log(np.maximum(p1, PROB_FLOOR))).sum() - (q2 * np.log(np.maximum(p2, PROB_FLOOR))).sum()
    loss /= B
    # d/dlogits of -sum q log softmax = p - q when sum(q) = 1
    g2, dmod = mlp_backward(head.level2, mod, (p2 - q2) / B, c2)
    dmx = dmod * xn
    g_scale_w = p1.T @ dmx
    g_scale_b = dmx.sum(axis=0)
    g_shift_w = p1.T @ dmod
    g_shift_b = dmod.sum(axis=0)
    dp1 = dmx @ head.scale_w.T + dmod @ head.shift_w.T
    dlogits1 = (p1 - q1) / B + p1 * (dp1 - (dp1 * p1).sum(axis=1, keepdims=True))
    g1, _ = mlp_backward(head.level1, xn, dlogits1, c1)
    return float(loss), g1 + [g_scale_w, g_scale_b, g_shift_w, g_shift_b] + g2


@dataclass(frozen=True)
class ClassifierConfig:
    k1: int = 4
    k2: int = 4
    hidden: int = 128
    epochs: int = 50
    batch_size: int = 512
    epsilon: float = 0.1
    lr_min: float = 5e-4
    lr_max: float = 5e-3
    optimizer: str = "adamw"
    weight_decay: float = 1e-2


def train_classifier(features, labels, config: ClassifierConfig = ClassifierConfig(), seed=0) -> ClassifierHead:
    """Fit the two-level head on cached global features by mini-batch descent.

    The cache is filled once; every epoch iterates over a fresh shuffle of it.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (X.shape[0], 2):
        raise ShapeMismatch(f"labels {labels.shape} for {X.shape[0]} features")
    ss = as_seed_sequence(seed)
    s_init, s_shuffle = ss.spawn(2)
    head = init_classifier(X.shape[1], config.k1, config.k2, config.hidden, s_init)
    head.feature_mean = X.mean(axis=0)
    head.feature_scale = X.std(axis=0) + 1e-6
    if config.epochs == 0:
        return head
    rng = np.random.default_rng(s_shuffle)
    opt = make_optimizer(config.optimizer, config.weight_decay)
    params = head.params()
    n = X.shape[0]
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = steps_per_epoch * config.epochs
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss, grads = classifier_loss_and_grads(head, X[idx], labels[idx], config.epsilon)
            opt.step(params, grads, one_cycle_lr(step, total, config.lr_min, config.lr_max))
            losses.append(loss * len(idx))
            step += 1
        head.history.append(float(sum(losses) / n))
    return head


def predict_leaves(head: ClassifierHead, features):
    """Argmax level labels and confidence per feature row."""
    p1, p2 = classifier_forward(head, np.atleast_2d(features))
    conf = p1.max(axis=1) * p2.max(axis=1)
    return np.stack([p1.argmax(axis=1), p2.argmax(axis=1)], axis=1), conf, p1, p2
