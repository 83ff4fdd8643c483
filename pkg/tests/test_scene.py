import numpy as np
import pytest

from lightloc.errors import InvalidSpec
from lightloc.geometry import apply, random_pose
from lightloc.scene import SceneSpec, backbone_features, generate_scene, local_descriptors, make_backbone

SMALL = SceneSpec(n_frames=80, n_test_frames=10, aliasing=2, alias_offset=30.0, seed=3)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SMALL)


def test_generation_is_deterministic(scene):
    again = generate_scene(SMALL)
    assert scene.objects.tobytes() == again.objects.tobytes()
    assert all(a.points.tobytes() == b.points.tobytes() for a, b in zip(scene.frames, again.frames))
    other = generate_scene(SceneSpec(n_frames=80, n_test_frames=10, seed=4))
    assert other.objects.shape != scene.objects.shape or not np.array_equal(other.objects, scene.objects)


def test_frame_counts_and_splits(scene):
    assert len(scene.frames) == 80 and len(scene.test_frames) == 10
    assert {f.split for f in scene.frames} == {"train"}
    assert {f.split for f in scene.test_frames} == {"test"}
    for f in scene.frames[:10]:
        assert f.points.shape[0] >= 3 and f.landmark_ids.shape == (f.points.shape[0],)


def test_frames_see_only_objects_in_range(scene):
    centers = scene.objects.mean(axis=1)[:, :2]
    for f in scene.frames[::9]:
        seen = np.unique(f.landmark_ids)
        d = np.linalg.norm(centers - f.position[:2], axis=1)
        np.testing.assert_array_equal(seen, np.flatnonzero(d <= SMALL.sensor_range))


def test_aliased_neighborhoods_look_identical(scene):
    assert scene.aliasing_factor == 2
    by_id = {f.id: f for f in scene.frames}
    for pair in scene.alias_pairs:
        src, cpy = by_id[pair.source_frame], by_id[pair.copy_frame]
        assert np.linalg.norm(src.position - cpy.position) > 20.0
        for o_src, o_cpy in zip(pair.source_objects, pair.copy_objects):
            a = src.points[src.landmark_ids == o_src]
            b = cpy.points[cpy.landmark_ids == o_cpy]
            assert len(a) == SMALL.points_per_object
            np.testing.assert_allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("kwargs", [
    dict(n_frames=0), dict(n_test_frames=-1), dict(layout="grid"), dict(points_per_object=3),
    dict(band=(5.0, 4.0)), dict(band=(3.0, 40.0)), dict(aliasing=8), dict(aliasing=2, alias_offset=10.0),
])
def test_invalid_specs(kwargs):
    with pytest.raises(InvalidSpec):
        generate_scene(SceneSpec(**kwargs))


def test_blob_layout_clusters_around_centers():
    s = generate_scene(SceneSpec(layout="blobs", n_frames=40, n_test_frames=8, seed=1))
    blobs = np.asarray(SceneSpec().blob_centers)
    d = np.linalg.norm(s.positions[:, None, :2] - blobs[None], axis=2).min(axis=1)
    assert d.max() < 5 * SceneSpec().blob_sigma


def test_backbone_shapes_and_freeze(scene):
    bb = make_backbone(width=32, hidden=16, seed=2)
    dense, glob = backbone_features(bb, scene.frames[0])
    assert dense.shape == (len(scene.frames[0].points), 32) and glob.shape == (32,)
    assert (dense >= 0).all()
    with pytest.raises(ValueError):
        bb.w1[0, 0] = 1.0


def test_global_feature_ignores_point_order(scene, rng):
    bb = make_backbone()
    pts = scene.frames[5].points
    perm = rng.permutation(len(pts))
    np.testing.assert_allclose(backbone_features(bb, pts[perm])[1], backbone_features(bb, pts)[1], atol=1e-12)


def test_descriptors_are_rigid_invariant(scene, rng):
    pts = scene.frames[2].points
    moved = apply(random_pose(rng), pts)
    np.testing.assert_allclose(local_descriptors(moved), local_descriptors(pts), atol=1e-9)


def test_empty_frame_rejected():
    with pytest.raises(ValueError):
        backbone_features(make_backbone(), np.zeros((0, 3)))
