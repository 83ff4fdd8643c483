import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lightloc.errors import InvalidConfig, LengthMismatch, SingularInnovation
from lightloc.fusion import (
    DriftSpec,
    FusionConfig,
    KalmanState,
    Observation,
    OdometryStep,
    integrate,
    kf_predict,
    kf_update,
    run_fusion,
    simulate_odometry,
    write_trajectory,
)


def circle(length=1000.0, n=2000):
    R = length / (2 * math.pi)
    phi = np.linspace(0, 2 * math.pi, n + 1)
    return np.column_stack([R * np.cos(phi), R * np.sin(phi), np.zeros(n + 1)])


# --- predict / update --------------------------------------------------------------


def test_predict_examples():
    s = KalmanState(np.zeros(3), np.eye(3))
    same = kf_predict(s, OdometryStep(np.zeros(3), np.zeros((3, 3))))
    np.testing.assert_array_equal(same.mean, s.mean)
    np.testing.assert_array_equal(same.cov, s.cov)
    moved = kf_predict(s, OdometryStep(np.array([1.0, 0, 0]), np.eye(3)))
    np.testing.assert_array_equal(moved.mean, [1, 0, 0])
    np.testing.assert_array_equal(moved.cov, 2 * np.eye(3))


def test_update_equal_trust_is_midpoint():
    post = kf_update(KalmanState(np.zeros(3), np.eye(3)), Observation(np.array([2.0, 4, 6]), 0.0))
    np.testing.assert_allclose(post.mean, [1, 2, 3], atol=1e-15)
    np.testing.assert_allclose(post.cov, 0.5 * np.eye(3), atol=1e-15)


def test_update_full_confidence_returns_measurement():
    z = np.array([3.0, -1.0, 0.5])
    post = kf_update(KalmanState(np.array([10.0, 10, 10]), np.diag([1.0, 2.0, 3.0])), Observation(z, 1.0))
    np.testing.assert_array_equal(post.mean, z)
    np.testing.assert_allclose(post.cov, 0.0, atol=1e-15)


def test_update_gain_at_three_quarters():
    post = kf_update(KalmanState(np.zeros(3), np.eye(3)), Observation(np.ones(3), 0.75))
    np.testing.assert_allclose(post.mean, 0.8, atol=1e-15)


def test_singular_innovation():
    with pytest.raises(SingularInnovation):
        kf_update(KalmanState(np.zeros(3), np.zeros((3, 3))), Observation(np.ones(3), 1.0))


def test_observation_rejects_bad_confidence():
    with pytest.raises(ValueError):
        Observation(np.zeros(3), 1.5)


def test_state_is_read_only():
    s = KalmanState(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        s.mean[0] = 1.0


@given(st.floats(1e-3, 100.0), st.floats(0.0, 1.0))
def test_scalar_gain_bounds(p, c):
    post = kf_update(KalmanState(np.zeros(3), np.eye(3) * p), Observation(np.ones(3), c))
    k = post.mean[0]
    assert 0.0 <= k <= 1.0 + 1e-12
    assert k == pytest.approx(p / ((1 - c) + p), rel=1e-9)


@given(st.integers(0, 2**31), st.floats(0.0, 0.999))
def test_posterior_never_exceeds_prior(seed, c):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    P = A @ A.T + 0.1 * np.eye(3)
    post = kf_update(KalmanState(rng.normal(size=3), P), Observation(rng.normal(size=3), c))
    assert np.linalg.eigvalsh(P - post.cov).min() >= -1e-9
    np.testing.assert_allclose(post.cov, post.cov.T, atol=1e-12)
    assert np.linalg.eigvalsh(post.cov).min() >= -1e-9


def test_repeated_full_confidence_update_is_idempotent():
    z = np.array([1.0, 2.0, 3.0])
    s = kf_update(KalmanState(np.zeros(3), np.eye(3)), Observation(z, 1.0))
    s = kf_predict(s, OdometryStep(np.zeros(3), np.eye(3) * 0.01))
    again = kf_update(s, Observation(z, 1.0))
    np.testing.assert_array_equal(again.mean, z)


# --- odometry -----------------------------------------------------------------


def test_unbiased_odometry_reproduces_ground_truth():
    gt = circle(200.0, 300)
    raw = integrate(gt[0], simulate_odometry(gt, DriftSpec((0.0, 0.0, 0.0), 0.0)))
    np.testing.assert_allclose(raw, gt, atol=1e-9)


def test_bias_gives_expected_terminal_drift():
    gt = circle(1000.0, 2000)
    raw = integrate(gt[0], simulate_odometry(gt, DriftSpec((0.05, 0.0, 0.0), 0.0)))
    path = np.linalg.norm(np.diff(gt, axis=0), axis=1).sum()
    assert np.linalg.norm(raw[-1] - gt[-1]) == pytest.approx(0.05 * path, rel=1e-9)
    assert 49.0 < np.linalg.norm(raw[-1] - gt[-1]) < 50.0


def test_odometry_is_reproducible():
    gt = circle(100.0, 50)
    a = simulate_odometry(gt, DriftSpec(noise_sigma=0.1), seed=4)
    b = simulate_odometry(gt, DriftSpec(noise_sigma=0.1), seed=4)
    assert all(x.delta.tobytes() == y.delta.tobytes() for x, y in zip(a, b))
    c = simulate_odometry(gt, DriftSpec(noise_sigma=0.1), seed=5)
    assert any(x.delta.tobytes() != y.delta.tobytes() for x, y in zip(a, c))


# --- full runs ------------------------------------------------------------------


def test_perfect_observations_give_zero_error():
    gt = circle(200.0, 100)
    steps = simulate_odometry(gt, DriftSpec())
    res = run_fusion(gt, steps, [Observation(p, 1.0) for p in gt])
    assert res.fused_error < 1e-12
    assert res.raw_error > 1.0
    assert res.improvement == pytest.approx(100.0)


def test_no_observations_reproduce_raw_odometry():
    gt = circle(200.0, 100)
    steps = simulate_odometry(gt, DriftSpec())
    res = run_fusion(gt, steps, [None] * len(gt))
    np.testing.assert_allclose(res.fused, res.raw, atol=1e-9)


def test_stride_and_floor_skip_updates():
    gt = circle(200.0, 40)
    steps = simulate_odometry(gt, DriftSpec())
    obs = [Observation(p, 1.0) for p in gt]
    res = run_fusion(gt, steps, obs, FusionConfig(stride=4))
    on = np.linalg.norm(res.fused - gt, axis=1) < 1e-12
    assert on[::4].all() and not on[1:4].any()
    low = [Observation(p, 0.2) for p in gt]
    np.testing.assert_allclose(run_fusion(gt, steps, low, FusionConfig(confidence_floor=0.5)).fused, res.raw,
                               atol=1e-9)


def test_length_and_config_checks():
    gt = circle(100.0, 10)
    with pytest.raises(LengthMismatch):
        run_fusion(gt, simulate_odometry(gt)[:-1], [None] * len(gt))
    with pytest.raises(InvalidConfig):
        FusionConfig(stride=0)


def test_trajectory_csv(tmp_path):
    write_trajectory(tmp_path / "t.csv", [[0.0, 1.0, 2.0], [0.5, 0.25, 0.0]])
    assert (tmp_path / "t.csv").read_text().splitlines() == ["t,x,y,z", "0,0.0,1.0,2.0", "1,0.5,0.25,0.0"]
