import numpy as np
import pytest

from lightloc.errors import InvalidConfig, LengthMismatch
from lightloc.geometry import transform
from lightloc.gradcheck import kink_margin, numeric_gradients, relative_error
from lightloc.mlp import mlp_backward, mlp_forward
from lightloc.rsd import RsdConfig, expected_sample_evaluations
from lightloc.scene import SceneSpec, backbone_features, generate_scene, make_backbone
from lightloc.scg import ClassifierConfig, build_hierarchical_labels, train_classifier
from lightloc.trainer import (
    RegressionHead,
    TrainConfig,
    build_feature_cache,
    evaluate,
    init_head,
    l1_scene_loss,
    planned_active_sizes,
    predict_world,
    train_scr,
    write_history,
)

FAST = dict(epochs=3, hidden=16, points_per_frame=32, frames_per_batch=4)


@pytest.fixture(scope="module")
def world():
    scene = generate_scene(SceneSpec(n_frames=60, n_test_frames=6, aliasing=2, alias_offset=30.0, seed=5))
    backbone = make_backbone()
    cache = build_feature_cache(scene.frames, backbone)
    _, labels = build_hierarchical_labels(scene.positions[:, :2], 2, 2, seed=5)
    clf = train_classifier(cache.global_, labels, ClassifierConfig(k1=2, k2=2, epochs=20, batch_size=16), seed=5)
    return scene, backbone, cache, clf


# --- loss --------------------------------------------------------------------


def test_l1_cases():
    pts = np.arange(12.0).reshape(4, 3)
    assert l1_scene_loss(pts, pts)[0] == 0.0
    assert l1_scene_loss([[1.0, 1.0, 1.0]], [[0.0, 0.0, 0.0]])[0] == 3.0
    loss, per = l1_scene_loss([[1.0, 0, 0], [0, 2.0, 0]], np.zeros((2, 3)))
    assert loss == 1.5
    np.testing.assert_array_equal(per, [1.0, 2.0])


def test_l1_length_mismatch():
    with pytest.raises(LengthMismatch):
        l1_scene_loss(np.zeros((2, 3)), np.zeros((3, 3)))


def test_regression_gradient_matches_finite_differences(rng):
    cfg = TrainConfig(hidden=6, depth=3, scg=False)
    head = init_head(5, 2, cfg, center=np.ones(3), scale=2.0)
    x = rng.normal(size=(8, 7))
    while kink_margin(head.mlp, x) < 1e-2:
        x = rng.normal(size=(8, 7))
    y = rng.normal(size=(8, 3))

    def loss():
        return l1_scene_loss(head.center + head.scale * mlp_forward(head.mlp, x), y)[0]

    pred = head.center + head.scale * mlp_forward(head.mlp, x)
    grads, _ = mlp_backward(head.mlp, x, head.scale * np.sign(pred - y) / len(x))
    assert relative_error(grads, numeric_gradients(loss, head.mlp.params())) < 1e-4


# --- config ------------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [
    dict(epochs=0), dict(lr_min=0.0), dict(lr_min=0.1, lr_max=0.01), dict(strategy="best"),
    dict(strategy="rsd", epochs=10),
])
def test_config_validation(kwargs):
    with pytest.raises(InvalidConfig):
        TrainConfig(**kwargs)


def test_points_per_frame_must_fit(world):
    scene, backbone, cache, _ = world
    with pytest.raises(InvalidConfig):
        train_scr(scene.frames, backbone, None, TrainConfig(scg=False, points_per_frame=10**6, epochs=1), cache)


def test_guidance_requires_classifier(world):
    scene, backbone, cache, _ = world
    with pytest.raises(InvalidConfig):
        train_scr(scene.frames, backbone, None, TrainConfig(scg=True, **FAST), cache)


# --- training ----------------------------------------------------------------


def test_training_is_deterministic(world):
    scene, backbone, cache, clf = world
    a = train_scr(scene.frames, backbone, clf, TrainConfig(seed=3, **FAST), cache)
    b = train_scr(scene.frames, backbone, clf, TrainConfig(seed=3, **FAST), cache)
    assert a.history == b.history
    for x, y in zip(a.head.mlp.params(), b.head.mlp.params()):
        assert x.tobytes() == y.tobytes()


def test_training_reduces_loss(world):
    scene, backbone, cache, clf = world
    for scg in (False, True):
        res = train_scr(scene.frames, backbone, clf, TrainConfig(scg=scg, **{**FAST, "epochs": 6}), cache)
        assert res.history[-1]["mean_loss"] < res.history[0]["mean_loss"]


def test_backbone_is_frozen(world):
    scene, backbone, cache, clf = world
    before = [a.copy() for a in (backbone.w1, backbone.b1, backbone.w2, backbone.b2)]
    feats = backbone_features(backbone, scene.frames[0])[0].copy()
    train_scr(scene.frames, backbone, clf, TrainConfig(**FAST), cache)
    for a, b in zip(before, (backbone.w1, backbone.b1, backbone.w2, backbone.b2)):
        assert a.tobytes() == b.tobytes()
    assert feats.tobytes() == backbone_features(backbone, scene.frames[0])[0].tobytes()


def test_guidance_separates_aliased_points(world):
    scene, backbone, cache, clf = world
    res = train_scr(scene.frames, backbone, clf, TrainConfig(**FAST), cache)
    by_id = {f.id: f for f in scene.frames}
    for pair in scene.alias_pairs:
        src, cpy = by_id[pair.source_frame], by_id[pair.copy_frame]
        # one aliased object in each frame: same shape, so equal dense features up to rounding
        o_src, o_cpy = pair.source_objects[0], pair.copy_objects[0]
        d_src = backbone_features(backbone, src.points)[0][src.landmark_ids == o_src]
        d_cpy = backbone_features(backbone, cpy.points)[0][cpy.landmark_ids == o_cpy]
        g_src = _guidance(clf, backbone, src)
        g_cpy = _guidance(clf, backbone, cpy)
        assert not np.allclose(g_src, g_cpy)
        x_src, x_cpy = res.head.inputs(d_src, g_src), res.head.inputs(d_cpy, g_cpy)
        n = res.head.mlp.in_dim - res.head.guidance_dim
        np.testing.assert_allclose(x_src[:, :n], x_cpy[:, :n], atol=1e-9)
        assert not np.allclose(x_src[:, n:], x_cpy[:, n:])


def _guidance(clf, backbone, frame):
    from lightloc.scg import classifier_forward, guidance_feature

    p1, _ = classifier_forward(clf, backbone_features(backbone, frame)[1])
    return guidance_feature(p1, 0.0)


@pytest.mark.parametrize("strategy", ["rsd", "random", "uniform"])
def test_pruning_strategies_follow_the_schedule(world, strategy):
    scene, backbone, cache, clf = world
    cfg = TrainConfig(epochs=25, hidden=8, points_per_frame=8, frames_per_batch=8, scg=False,
                      strategy=strategy, rsd=RsdConfig())
    res = train_scr(scene.frames, backbone, None, cfg, cache)
    n = len(scene.frames)
    assert [h["active_size"] for h in res.history] == planned_active_sizes(cfg, n)
    assert res.sample_evaluations == expected_sample_evaluations(cfg.rsd, n)
    assert [r["action"] for r in res.audit if r["action"] != "noop"] == ["prune", "prune", "restore_full"]


def test_history_csv(tmp_path, world):
    scene, backbone, cache, clf = world
    res = train_scr(scene.frames, backbone, None, TrainConfig(scg=False, **FAST), cache)
    write_history(tmp_path / "h.csv", res.history)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,active_size"
    assert len(lines) == FAST["epochs"] + 1


def test_head_round_trip(tmp_path, world):
    scene, backbone, cache, clf = world
    res = train_scr(scene.frames, backbone, clf, TrainConfig(**FAST), cache)
    res.head.save(tmp_path / "r.llrh")
    back = RegressionHead.load(tmp_path / "r.llrh")
    f = scene.test_frames[0]
    assert predict_world(back, backbone, clf, f).tobytes() == predict_world(res.head, backbone, clf, f).tobytes()
    assert (tmp_path / "r.llrh").read_bytes()[:4] == b"LLRH"


# --- evaluation ----------------------------------------------------------------


def test_oracle_evaluation_is_exact(world):
    scene, backbone, _, clf = world
    ev = evaluate(None, backbone, clf, scene.test_frames, oracle=True)
    assert ev.failures == 0
    assert ev.mean_position < 1e-9 and ev.mean_orientation < 1e-6


def test_all_outlier_frame_counts_as_failure(world):
    scene, backbone, _, clf = world
    frames = scene.test_frames[:2]
    rng = np.random.default_rng(0)
    preds = [frames[0].world_points, rng.uniform(-1e3, 1e3, frames[1].points.shape)]
    ev = evaluate(None, backbone, clf, frames, predictions=preds)
    assert ev.failures == 1
    assert [r["status"] for r in ev.rows] == ["ok", "no_consensus"]
    assert np.isfinite(ev.median_position)


def test_world_points_match_pose(world):
    scene, *_ = world
    f = scene.frames[3]
    np.testing.assert_allclose(f.world_points, transform(f.pose, f.cloud).points, atol=1e-12)


@pytest.mark.slow
def test_full_training_converges_on_clean_loop():
    scene = generate_scene(SceneSpec())
    res = train_scr(scene.frames, make_backbone(), None, TrainConfig(scg=False, strategy="none"))
    assert res.history[-1]["mean_loss"] < 0.5
