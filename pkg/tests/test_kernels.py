"""Kernel backends agree with each other and with rotation ground truth."""

import numpy as np

from ehicl import kernels
from ehicl.kernels import (
    _numpy_fk_chain,
    _numpy_rodrigues_batch,
    _numpy_skin_vertices,
    active_backend,
)
from ehicl.rng import seeded_rng

from oracles import rotation_matrix


def test_rodrigues_matches_scipy():
    rng = seeded_rng(1)
    aa = rng.standard_normal((40, 3)) * 1.5
    ours = kernels.rodrigues_batch(aa)
    for i in range(len(aa)):
        assert np.abs(ours[i] - rotation_matrix(aa[i])).max() < 1e-12


def test_rodrigues_small_angle_series():
    for scale in (0.0, 1e-12, 1e-9, 1e-8, 1e-6):
        aa = np.array([[scale, 0.0, 0.0]])
        r = kernels.rodrigues_batch(aa)[0]
        assert np.abs(r - rotation_matrix(aa[0])).max() < 1e-12
    assert np.array_equal(kernels.rodrigues_batch(np.zeros((1, 3)))[0], np.eye(3))


def test_rodrigues_orthonormal_det_one():
    rng = seeded_rng(2)
    aa = rng.standard_normal((25, 3)) * 2.0
    rots = kernels.rodrigues_batch(aa)
    for r in rots:
        assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_backends_agree():
    """Whatever backend is active must match the pure-numpy fallback."""
    rng = seeded_rng(3)
    parents = np.array([-1, 0, 1, 2, 0, 4, 5], dtype=np.int64)
    aa = rng.standard_normal((7, 3)) * 0.7
    joints = rng.standard_normal((7, 3)) * 30
    shaped = rng.standard_normal((50, 3)) * 40
    weights = np.abs(rng.standard_normal((50, 7)))
    weights /= weights.sum(axis=1, keepdims=True)

    rots_a = kernels.rodrigues_batch(aa)
    rots_b = _numpy_rodrigues_batch(aa)
    assert np.abs(rots_a - rots_b).max() < 1e-13

    wrot_a, u_a = kernels.fk_chain(rots_a, joints, parents)
    wrot_b, u_b = _numpy_fk_chain(rots_b, joints, parents)
    assert np.abs(wrot_a - wrot_b).max() < 1e-12
    assert np.abs(u_a - u_b).max() < 1e-9

    va = kernels.skin_vertices(shaped, weights, wrot_a, u_a)
    vb = _numpy_skin_vertices(shaped, weights, wrot_b, u_b)
    assert np.abs(va - vb).max() < 1e-9


def test_backend_reports_name():
    assert active_backend() in ("numba", "numpy")
