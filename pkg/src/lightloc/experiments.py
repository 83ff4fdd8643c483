"""Paired-seed experiments on synthetic scenes.

Each function returns plain per-seed rows so callers (the acceptance suite,
notebooks, the benchmark script) can apply their own pass rules and print them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import spearmanr

from . import fusion
from .rsd import expected_sample_evaluations
from .scene import SceneSpec, generate_scene, make_backbone
from .scg import ClassifierConfig, ClassifierHead, ClusterModel, build_hierarchical_labels, predict_leaves, train_classifier
from .seeds import derive
from .trainer import TrainConfig, build_feature_cache, evaluate, train_scr

ALIASED_SCENE = SceneSpec(aliasing=4)
FUSION_SCENE = SceneSpec(loop_length=1000.0, n_frames=1000, n_test_frames=1000)


def sub_seed(seed: int, name: str) -> int:
    return int(derive(seed, name).generate_state(1, dtype="uint32")[0])


def fusion_observations(head: ClassifierHead, model: ClusterModel, global_features: np.ndarray):
    """Argmax leaf center and confidence per frame; a ground-plane center is lifted to z = 0."""
    leaves, conf, _, _ = predict_leaves(head, global_features)
    centers = model.level2_centers[leaves[:, 0], leaves[:, 1]]
    if centers.shape[1] == 2:
        centers = np.hstack([centers, np.zeros((len(centers), 1))])
    return [fusion.Observation(z, float(c)) for z, c in zip(centers, conf)]


@dataclass
class _Prepared:
    scene: object
    backbone: object
    cache: object
    model: ClusterModel
    classifier: ClassifierHead


def _prepare(spec: SceneSpec, seed: int, k1: int, k2: int, clf_config: ClassifierConfig | None = None) -> _Prepared:
    scene = generate_scene(replace(spec, seed=sub_seed(seed, "scene")))
    backbone = make_backbone(seed=sub_seed(seed, "backbone"))
    cache = build_feature_cache(scene.frames, backbone)
    model, labels = build_hierarchical_labels(scene.positions[:, :2], k1, k2, sub_seed(seed, "cluster"))
    cfg = replace(clf_config or ClassifierConfig(), k1=k1, k2=k2)
    clf = train_classifier(cache.global_, labels, cfg, sub_seed(seed, "classifier"))
    return _Prepared(scene, backbone, cache, model, clf)


# --- classifier -----------------------------------------------------------------------


def classifier_accuracy(seed: int, epochs: int = 50) -> dict:
    """Leaf accuracy on held-out frames of the four-blob scene (k1 = k2 = 2)."""
    p = _prepare(SceneSpec(layout="blobs"), seed, 2, 2, ClassifierConfig(epochs=epochs))
    test_cache = build_feature_cache(p.scene.test_frames, p.backbone)
    truth = p.model.predict(np.array([f.position[:2] for f in p.scene.test_frames]))
    pred, _, _, _ = predict_leaves(p.classifier, test_cache.global_)
    return {"seed": seed, "leaf_accuracy": float((pred == truth).all(axis=1).mean()),
            "level1_accuracy": float((pred[:, 0] == truth[:, 0]).mean())}


# --- guidance ablation ---------------------------------------------------------------


def scg_ablation(seeds, spec: SceneSpec = ALIASED_SCENE, train: TrainConfig = TrainConfig(), k1: int = 4,
                 k2: int = 4) -> list[dict]:
    """Train with and without guidance on the same scene, classifier and seed."""
    rows = []
    for seed in seeds:
        p = _prepare(spec, seed, k1, k2)
        row = {"seed": seed}
        for tag, scg in (("with", True), ("without", False)):
            cfg = replace(train, scg=scg, seed=sub_seed(seed, "trainer"))
            res = train_scr(p.scene.frames, p.backbone, p.classifier if scg else None, cfg, p.cache)
            ev = evaluate(res.head, p.backbone, p.classifier, p.scene.test_frames)
            row[f"loss_{tag}"] = res.history[-1]["mean_loss"]
            row[f"median_{tag}"] = ev.median_position
            row[f"failures_{tag}"] = ev.failures
        rows.append(row)
    return rows


# --- pruning ablation ---------------------------------------------------------------


def rsd_ablation(seeds, spec: SceneSpec = SceneSpec(), train: TrainConfig = TrainConfig(scg=False),
                 strategies=("none", "rsd", "random")) -> list[dict]:
    """Full training against pruned training at an identical sample budget."""
    rows = []
    for seed in seeds:
        scene = generate_scene(replace(spec, seed=sub_seed(seed, "scene")))
        backbone = make_backbone(seed=sub_seed(seed, "backbone"))
        cache = build_feature_cache(scene.frames, backbone)
        row = {"seed": seed, "frames": len(scene.frames),
               "expected_evaluations": expected_sample_evaluations(train.rsd, len(scene.frames))}
        for strategy in strategies:
            cfg = replace(train, strategy=strategy, scg=False, seed=sub_seed(seed, "trainer"),
                          rsd=replace(train.rsd, total_epochs=train.epochs) if strategy != "none" else train.rsd)
            res = train_scr(scene.frames, backbone, None, cfg, cache)
            ev = evaluate(res.head, backbone, None, scene.test_frames)
            row[f"median_{strategy}"] = ev.median_position
            row[f"failures_{strategy}"] = ev.failures
            row[f"evaluations_{strategy}"] = res.sample_evaluations
        rows.append(row)
    return rows


# --- fusion -------------------------------------------------------------------------


def fusion_experiment(seeds, spec: SceneSpec = FUSION_SCENE, k1: int = 10, k2: int = 10,
                      drift: fusion.DriftSpec = fusion.DriftSpec(bias_per_meter=(0.06, 0.0, 0.0)),
                      config: fusion.FusionConfig = fusion.FusionConfig()) -> list[dict]:
    """Drifting odometry along the test trajectory, corrected by leaf-center observations."""
    rows = []
    for seed in seeds:
        p = _prepare(spec, seed, k1, k2)
        frames = p.scene.test_frames
        gt = np.array([f.position for f in frames])
        obs = fusion_observations(p.classifier, p.model, build_feature_cache(frames, p.backbone).global_)
        steps = fusion.simulate_odometry(gt, drift, sub_seed(seed, "odometry"))
        res = fusion.run_fusion(gt, steps, obs, config)
        conf = np.array([o.confidence for o in obs])
        err = np.linalg.norm(np.array([o.z for o in obs]) - gt, axis=1)
        rho = float(spearmanr(conf, err).statistic) if np.ptp(conf) > 0 else math.nan
        rows.append({"seed": seed, "terminal_drift": float(np.linalg.norm(res.raw[-1] - gt[-1])),
                     "raw_error": res.raw_error, "fused_error": res.fused_error,
                     "improvement": res.improvement, "spearman": rho})
    return rows
