import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lightloc import kernels
from lightloc.geometry import random_pose

py = kernels.python_backend
cy = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def hypotheses(seed, h=64, n=300):
    rng = np.random.default_rng(seed)
    poses = [random_pose(rng, 5.0) for _ in range(h)]
    R = np.ascontiguousarray([p.rotation for p in poses])
    t = np.ascontiguousarray([p.translation for p in poses])
    src = rng.uniform(-5, 5, (n, 3))
    dst = src @ poses[0].rotation.T + poses[0].translation
    dst[n // 2:] += rng.normal(0, 1.0, (n - n // 2, 3))
    return R, t, src, dst


def test_python_scoring_matches_brute_force():
    R, t, src, dst = hypotheses(0, h=8, n=50)
    counts, means = py.score_hypotheses(R, t, src, dst, 0.5)
    for h in range(len(R)):
        r = np.linalg.norm(src @ R[h].T + t[h] - dst, axis=1)
        inl = r <= 0.5
        assert counts[h] == inl.sum()
        if inl.any():
            assert means[h] == pytest.approx(r[inl].mean(), rel=1e-12)
        else:
            assert means[h] == np.inf


def test_python_assignment_matches_brute_force(rng):
    pts, centers = rng.normal(size=(200, 2)), rng.normal(size=(7, 2))
    labels, d2 = py.assign_nearest(pts, centers)
    full = ((pts[:, None] - centers[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(labels, full.argmin(1))
    np.testing.assert_allclose(d2, full.min(1), rtol=1e-12)


def test_assignment_tie_goes_to_first_center():
    pts = np.array([[0.0, 0.0]])
    centers = np.array([[1.0, 0.0], [-1.0, 0.0]])
    for backend in filter(None, (py, cy)):
        labels, _ = backend.assign_nearest(pts, centers)
        assert labels[0] == 0


@needs_compiled
@given(st.integers(0, 2**31), st.floats(0.05, 3.0))
def test_scoring_parity(seed, thr):
    R, t, src, dst = hypotheses(seed)
    c1, m1 = py.score_hypotheses(R, t, src, dst, thr)
    c2, m2 = cy.score_hypotheses(R, t, src, dst, thr)
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_allclose(m1, m2, rtol=1e-12)


@needs_compiled
@given(st.integers(0, 2**31), st.integers(1, 12), st.integers(2, 3))
def test_assignment_parity(seed, k, d):
    rng = np.random.default_rng(seed)
    pts, centers = rng.normal(size=(300, d)), rng.normal(size=(k, d))
    l1, d1 = py.assign_nearest(pts, centers)
    l2, d2 = cy.assign_nearest(pts, centers)
    np.testing.assert_array_equal(l1, l2)
    np.testing.assert_array_equal(d1, d2)


def test_env_var_forces_python_backend():
    code = "from lightloc import kernels; print(kernels.BACKEND_NAME)"
    env = dict(os.environ, LIGHTLOC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
