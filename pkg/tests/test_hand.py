"""Forward-model suite: rig invariants, pose correctness, gradients.

The independent oracle is tests/oracles.naive_lbs (scipy rotations +
homogeneous 4x4 chains + per-vertex double loop).
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from ehicl import tensor as T
from ehicl.hand import (
    HandParams,
    build_rig,
    forward,
    forward_tape,
    load_rig,
    mirror_params,
    save_rig,
)
from ehicl.hand.rig import edge_face_counts
from ehicl.rng import seeded_rng
from ehicl.serial import BadMagicError

from oracles import central_difference, naive_lbs, tree_depths


def _random_params(rng, side="right", pose_scale=0.3):
    return HandParams(
        pose_scale * rng.standard_normal((15, 3)),
        rng.standard_normal(10),
        0.5 * rng.standard_normal(3),
        side,
    )


# ---------------------------------------------------------------- rig build


def test_build_rig_deterministic():
    a, b = build_rig(123), build_rig(123)
    assert np.array_equal(a.rest_vertices, b.rest_vertices)
    assert np.array_equal(a.skinning_weights, b.skinning_weights)
    assert np.array_equal(a.shape_blend, b.shape_blend)
    assert np.array_equal(a.joint_regressor, b.joint_regressor)
    c = build_rig(124)
    assert not np.array_equal(a.rest_vertices, c.rest_vertices)


def test_rig_convex_rows(rig):
    assert np.abs(rig.skinning_weights.sum(axis=1) - 1.0).max() < 1e-9
    assert rig.skinning_weights.min() >= 0.0
    assert np.abs(rig.joint_regressor.sum(axis=1) - 1.0).max() < 1e-9
    assert rig.joint_regressor.min() >= 0.0


def test_rig_mesh_is_manifold(rig):
    counts = edge_face_counts(rig.faces)
    assert set(counts.values()) == {2}
    assert rig.rest_vertices.shape == (778, 3)
    assert rig.faces.shape[1] == 3


def test_kinematic_tree_single_root_acyclic(rig):
    parents = rig.kinematic_tree
    assert (parents < 0).sum() == 1
    depths = tree_depths(parents)  # raises on cycles
    assert depths.min() == 0


def test_fingertips_are_most_distal(rig):
    """Graph-distance oracle over the 21-joint reported tree."""
    depths = tree_depths(rig.reported_parents)
    most_distal = set(np.argsort(depths)[-5:].tolist())
    assert most_distal == {16, 17, 18, 19, 20}
    assert all(depths[t] == 4 for t in range(16, 21))


def test_every_joint_has_skinned_vertices(rig):
    assert np.all(rig.skinning_weights.sum(axis=0) > 0)


# ------------------------------------------------------------- forward pose


def test_zero_pose_is_exact_identity(rig):
    geom = forward(rig, HandParams.zeros())
    assert np.array_equal(geom.vertices, rig.rest_vertices)


def test_rigid_case_rotation_about_root(rig):
    rng = seeded_rng(0)
    for _ in range(5):
        rvec = rng.standard_normal(3)
        geom = forward(rig, HandParams(np.zeros((15, 3)), np.zeros(10), rvec))
        rot = Rotation.from_rotvec(rvec).as_matrix()
        j0 = (rig.joint_regressor[:16] @ rig.rest_vertices)[0]
        expected = (rig.rest_vertices - j0) @ rot.T + j0
        assert np.abs(geom.vertices - expected).max() < 1e-9


def test_joints_are_regressed_from_vertices(rig):
    geom = forward(rig, _random_params(seeded_rng(4)))
    assert np.abs(geom.joints - rig.joint_regressor @ geom.vertices).max() < 1e-9


def test_forward_matches_naive_oracle_50_draws(rig):
    rng = seeded_rng(50)
    for i in range(50):
        params = _random_params(rng, side="left" if i % 3 == 0 else "right")
        ours = forward(rig, params).vertices
        ref = naive_lbs(rig, params)
        assert np.abs(ours - ref).max() < 1e-9, f"draw {i}"


def test_tape_path_matches_kernel_path(rig):
    rng = seeded_rng(51)
    for i in range(5):
        side = "left" if i % 2 else "right"
        params = _random_params(rng, side=side)
        fast = forward(rig, params)
        vt, jt = forward_tape(rig, params.theta, params.beta, params.phi, side)
        assert np.abs(vt.data - fast.vertices).max() < 1e-9
        assert np.abs(jt.data - fast.joints).max() < 1e-9


def test_mid_finger_perturbation_moves_only_its_subtree(rig):
    """Brute-force per-vertex check against the naive oracle."""
    rng = seeded_rng(52)
    base = _random_params(rng)
    for joint, subtree in ((8, {8, 9}), (5, {5, 6}), (15, {15})):
        bumped = base.copy()
        bumped.theta[joint - 1] += np.array([0.3, -0.2, 0.1])  # theta row i drives joint i+1
        v0 = naive_lbs(rig, base)
        v1 = naive_lbs(rig, bumped)
        assert np.abs(forward(rig, bumped).vertices - v1).max() < 1e-9
        delta = np.linalg.norm(v1 - v0, axis=1)
        dominant = np.argmax(rig.skinning_weights, axis=1)
        outside = ~np.isin(dominant, list(subtree))
        assert delta[outside].max() < 1e-6
        assert delta[~outside].max() > 0.1  # the subtree really moves


def test_rigid_equivariance_random_rotations(rig):
    rng = seeded_rng(53)
    params = _random_params(rng)
    j0 = (rig.joint_regressor[:16] @ (rig.rest_vertices + rig.shape_blend @ params.beta))[0]
    base = forward(rig, params).vertices
    for _ in range(5):
        extra = Rotation.from_rotvec(rng.standard_normal(3))
        composed = (extra * Rotation.from_rotvec(params.phi)).as_rotvec()
        rotated = forward(
            rig, HandParams(params.theta, params.beta, composed)
        ).vertices
        expected = (base - j0) @ extra.as_matrix().T + j0
        assert np.abs(rotated - expected).max() < 1e-6


def test_shape_linearity_at_rest_pose(rig):
    rng = seeded_rng(54)
    b1, b2 = rng.standard_normal(10), rng.standard_normal(10)
    zero = np.zeros((15, 3))
    f = lambda b: forward(rig, HandParams(zero, b, np.zeros(3))).vertices
    lhs = f(b1 + b2)
    rhs = f(b1) + f(b2) - f(np.zeros(10))
    assert np.abs(lhs - rhs).max() < 1e-9


def test_mirror_consistency(rig):
    rng = seeded_rng(55)
    params = _random_params(rng, side="left")
    left = forward(rig, params).vertices
    right_mirrored = forward(rig, mirror_params(params)).vertices
    assert np.array_equal(left, right_mirrored * np.array([-1.0, 1.0, 1.0]))


# ---------------------------------------------------------------- gradients


def test_beta_jacobian_equals_shape_blend_at_rest(rig):
    for v, c in ((10, 0), (200, 1), (600, 2)):
        beta = T.Tensor(np.zeros(10), requires_grad=True)
        with T.Tape():
            verts, _ = forward_tape(rig, np.zeros((15, 3)), beta, np.zeros(3))
            T.backward(verts[v, c])
        assert np.array_equal(beta.grad, rig.shape_blend[v, c, :])


def test_phi_gradient_matches_finite_differences(rig):
    rng = seeded_rng(56)
    params = _random_params(rng)
    w = rng.standard_normal((778, 3))

    def loss_np(phi):
        return float((naive_lbs(rig, HandParams(params.theta, params.beta, phi)) * w).sum())

    phi_t = T.Tensor(params.phi, requires_grad=True)
    with T.Tape():
        verts, _ = forward_tape(rig, params.theta, params.beta, phi_t)
        T.backward(T.tsum(T.mul(verts, T.Tensor(w))))
    fd = central_difference(loss_np, params.phi)
    rel = np.abs(phi_t.grad - fd) / np.maximum(1e-6, np.abs(fd))
    assert rel.max() < 1e-3


def test_unused_joint_gradient_is_zero(rig):
    """Zero a leaf joint's weight column; its pose rows then have no effect."""
    from dataclasses import replace

    leaf = 15  # pinky DIP, a kinematic leaf
    weights = rig.skinning_weights.copy()
    weights[:, leaf - 1] += weights[:, leaf]
    weights[:, leaf] = 0.0
    stripped = replace(
        rig,
        rest_vertices=rig.rest_vertices.copy(),
        faces=rig.faces.copy(),
        kinematic_tree=rig.kinematic_tree.copy(),
        skinning_weights=weights,
        shape_blend=rig.shape_blend.copy(),
        joint_regressor=rig.joint_regressor.copy(),
    )
    theta = T.Tensor(0.2 * seeded_rng(57).standard_normal((15, 3)), requires_grad=True)
    with T.Tape():
        verts, _ = forward_tape(stripped, theta, np.zeros(10), np.zeros(3))
        T.backward(T.tmean(verts))
    assert np.array_equal(theta.grad[leaf - 1], np.zeros(3))
    assert np.abs(theta.grad).max() > 0  # other joints still matter


# ------------------------------------------------------------ serialization


def test_rig_round_trip(tmp_path, rig):
    path = tmp_path / "rig.bin"
    save_rig(path, rig)
    loaded = load_rig(path)
    assert loaded.seed == rig.seed
    assert np.array_equal(loaded.rest_vertices, rig.rest_vertices)
    assert np.array_equal(loaded.faces, rig.faces)
    assert np.array_equal(loaded.skinning_weights, rig.skinning_weights)
    assert forward(loaded, HandParams.zeros()).vertices.shape == (778, 3)


def test_rig_bad_magic(tmp_path, rig):
    path = tmp_path / "rig.bin"
    save_rig(path, rig)
    raw = bytearray(path.read_bytes())
    raw[:6] = b"WRONG1"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_rig(path)


# ------------------------------------------------------------------- params


def test_params_wrap_on_construction():
    theta = np.zeros((15, 3))
    theta[3] = [7.0, 0.0, 0.0]  # 7 rad > 2*pi
    p = HandParams(theta, np.zeros(10), np.array([0.0, 9.0, 0.0]))
    assert np.linalg.norm(p.theta[3]) < 2 * np.pi
    assert np.linalg.norm(p.phi) < 2 * np.pi
    # same rotation after wrapping
    a = Rotation.from_rotvec([7.0, 0.0, 0.0]).as_matrix()
    b = Rotation.from_rotvec(p.theta[3]).as_matrix()
    assert np.abs(a - b).max() < 1e-12


def test_params_validation():
    with pytest.raises(ValueError, match="theta"):
        HandParams(np.zeros((14, 3)), np.zeros(10), np.zeros(3))
    with pytest.raises(ValueError, match="beta"):
        HandParams(np.zeros((15, 3)), np.zeros(9), np.zeros(3))
    with pytest.raises(ValueError, match="finite"):
        HandParams(np.full((15, 3), np.nan), np.zeros(10), np.zeros(3))
    with pytest.raises(ValueError, match="side"):
        HandParams(np.zeros((15, 3)), np.zeros(10), np.zeros(3), side="up")


def test_params_vector_round_trip():
    rng = seeded_rng(58)
    p = _random_params(rng, side="left")
    q = HandParams.from_vector(p.to_vector(), "left")
    assert np.array_equal(p.theta, q.theta)
    assert np.array_equal(p.beta, q.beta)
    assert np.array_equal(p.phi, q.phi)
