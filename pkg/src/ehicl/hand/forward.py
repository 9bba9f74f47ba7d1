"""Hand forward model: parameters to millimeter vertices and 21 joints.

Two paths share the same math:

* :func:`forward` runs on plain numpy via the hot kernels; used by metrics,
  corpus generation and everything that never needs gradients.
* :func:`geometry_batch` / :func:`forward_tape` express the identical chain as
  tape ops, so losses differentiate through vertices back to theta/beta/phi.

Left hands evaluate as the x-mirror of the right-hand rig: parameters are
mirrored, the right-hand chain runs, and the output is x-negated.

Axis-angle to rotation uses the Rodrigues form with a series fallback below
angle 1e-8 so gradients stay finite at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from .. import kernels
from .params import HandParams, _MIRROR_AA
from .rig import FK_LEVELS, HandRig, N_SKINNED_JOINTS

__all__ = ["HandGeometry", "forward", "forward_tape", "geometry_batch"]

_MIRROR_VERTS = np.array([-1.0, 1.0, 1.0])

# maps axis-angle components to the flattened cross-product matrix
_GK = np.zeros((3, 9))
_GK[0, 5] = -1.0
_GK[0, 7] = 1.0
_GK[1, 2] = 1.0
_GK[1, 6] = -1.0
_GK[2, 1] = -1.0
_GK[2, 3] = 1.0

_EYE3 = np.eye(3).reshape(1, 1, 3, 3)
_SMALL_SQ = 1e-16

# flat order produced by level-wise chain composition, and its inverse
_FK_ORDER = np.array([0] + FK_LEVELS[0] + FK_LEVELS[1] + FK_LEVELS[2], dtype=np.int64)
_FK_INVERSE = np.argsort(_FK_ORDER)


@dataclass
class HandGeometry:
    """Posed surface and reported joints, both in millimeters."""

    vertices: np.ndarray  # (778, 3)
    joints: np.ndarray  # (21, 3)


def forward(rig: HandRig, params: HandParams) -> HandGeometry:
    """Fast non-differentiable pose evaluation (kernel-backed)."""
    theta, beta, phi = params.theta, params.beta, params.phi
    if params.side == "left":
        theta = theta * _MIRROR_AA
        phi = phi * _MIRROR_AA
    shaped = rig.rest_vertices + rig.shape_blend @ beta
    jrest = rig.joint_regressor[:N_SKINNED_JOINTS] @ shaped
    axis_angle = np.vstack([phi[None, :], theta])
    verts = kernels.posed_vertices(
        shaped, rig.skinning_weights, axis_angle, jrest, rig.kinematic_tree
    )
    if params.side == "left":
        verts = verts * _MIRROR_VERTS
    joints = rig.joint_regressor @ verts
    return HandGeometry(vertices=verts, joints=joints)


def _rodrigues_tape(A):
    """Batched axis-angle rows (M, J, 3) -> rotation matrices (M, J, 3, 3)."""
    m, j = A.shape[0], A.shape[1]
    sq = T.tsum(T.mul(A, A), axis=2, keepdims=True)  # (M, J, 1)
    small = sq.data < _SMALL_SQ
    ones = T.Tensor(np.ones_like(sq.data))
    sq_safe = T.where(small, ones, sq)
    th = T.sqrt(sq_safe)
    s1 = T.where(small, T.sub(1.0, T.div(sq, 6.0)), T.div(T.sin(th), th))
    s2 = T.where(small, T.sub(0.5, T.div(sq, 24.0)), T.div(T.sub(1.0, T.cos(th)), sq_safe))
    c = T.where(small, T.sub(1.0, T.div(sq, 2.0)), T.cos(th))
    k_flat = T.matmul(T.reshape(A, (m * j, 3)), T.Tensor(_GK))
    k_mat = T.reshape(k_flat, (m, j, 3, 3))
    outer = T.mul(T.reshape(A, (m, j, 3, 1)), T.reshape(A, (m, j, 1, 3)))
    c4 = T.reshape(c, (m, j, 1, 1))
    s14 = T.reshape(s1, (m, j, 1, 1))
    s24 = T.reshape(s2, (m, j, 1, 1))
    eye = T.Tensor(_EYE3)
    return T.add(T.add(T.mul(c4, eye), T.mul(s14, k_mat)), T.mul(s24, outer))


def geometry_batch(rig: HandRig, theta, beta, phi, sides):
    """Differentiable batched forward.

    theta (M,15,3), beta (M,10), phi (M,3) as tensors or arrays; sides is a
    length-M sequence of 'left'/'right'. Returns (vertices (M,V,3),
    joints (M,21,3)) tensors on the active tape.
    """
    theta = theta if isinstance(theta, T.Tensor) else T.Tensor(theta)
    beta = beta if isinstance(beta, T.Tensor) else T.Tensor(beta)
    phi = phi if isinstance(phi, T.Tensor) else T.Tensor(phi)
    m = theta.shape[0]
    nv = rig.rest_vertices.shape[0]

    left = np.array([s == "left" for s in sides])
    mir_a = np.ones((m, 1, 3))
    mir_a[left] = _MIRROR_AA
    mir_v = np.ones((m, 1, 3))
    mir_v[left] = _MIRROR_VERTS

    blend_t = rig.shape_blend.reshape(nv * 3, 10).T  # (10, V*3)
    shaped = T.add(
        T.Tensor(rig.rest_vertices.reshape(1, nv, 3)),
        T.reshape(T.matmul(beta, T.Tensor(blend_t)), (m, nv, 3)),
    )
    reg16 = T.Tensor(rig.joint_regressor[:N_SKINNED_JOINTS])
    j16 = T.matmul(reg16, shaped)  # (M, 16, 3)

    A = T.concat([T.reshape(phi, (m, 1, 3)), theta], axis=1)
    A = T.mul(A, T.Tensor(mir_a))
    rot_local = _rodrigues_tape(A)  # (M, 16, 3, 3)

    # chain composition, one level of all five fingers at a time; the skinning
    # translation u accumulates as u_c = u_p + R_p j_c - R_c j_c, which is
    # exactly zero at the identity pose
    def _rotate(rot, pts, k):
        return T.reshape(T.matmul(rot, T.reshape(pts, (m, k, 3, 1))), (m, k, 3))

    root_rot = rot_local[:, 0:1]
    j_root = j16[:, 0:1]
    root_u = T.sub(j_root, _rotate(root_rot, j_root, 1))
    rot_parts = [root_rot]
    u_parts = [root_u]
    parent_rot, parent_u = root_rot, root_u
    for level in FK_LEVELS:
        r_lvl = T.gather(rot_local, level, axis=1)  # (M, 5, 3, 3)
        j_lvl = T.gather(j16, level, axis=1)  # (M, 5, 3)
        rot_new = T.matmul(parent_rot, r_lvl)  # broadcasts root (M,1,..) over fingers
        u_new = T.add(parent_u, T.sub(_rotate(parent_rot, j_lvl, 5), _rotate(rot_new, j_lvl, 5)))
        rot_parts.append(rot_new)
        u_parts.append(u_new)
        parent_rot, parent_u = rot_new, u_new

    rot_all = T.gather(T.concat(rot_parts, axis=1), _FK_INVERSE, axis=1)
    u_all = T.gather(T.concat(u_parts, axis=1), _FK_INVERSE, axis=1)

    rot_delta = T.sub(rot_all, T.Tensor(np.eye(3).reshape(1, 1, 3, 3)))
    weights_t = T.Tensor(rig.skinning_weights)
    rv_flat = T.matmul(weights_t, T.reshape(rot_delta, (m, N_SKINNED_JOINTS, 9)))
    tv = T.matmul(weights_t, u_all)  # (M, V, 3)
    rv = T.reshape(rv_flat, (m, nv, 3, 3))
    moved = T.reshape(T.matmul(rv, T.reshape(shaped, (m, nv, 3, 1))), (m, nv, 3))
    verts = T.add(shaped, T.add(moved, tv))
    verts = T.mul(verts, T.Tensor(mir_v))
    joints = T.matmul(T.Tensor(rig.joint_regressor), verts)
    return verts, joints


def forward_tape(rig: HandRig, theta, beta, phi, side: str = "right"):
    """Single-hand differentiable forward; returns ((V,3), (21,3)) tensors."""
    theta = theta if isinstance(theta, T.Tensor) else T.Tensor(theta)
    beta = beta if isinstance(beta, T.Tensor) else T.Tensor(beta)
    phi = phi if isinstance(phi, T.Tensor) else T.Tensor(phi)
    verts, joints = geometry_batch(
        rig,
        T.reshape(theta, (1, 15, 3)),
        T.reshape(beta, (1, 10)),
        T.reshape(phi, (1, 3)),
        [side],
    )
    nv = rig.rest_vertices.shape[0]
    return T.reshape(verts, (nv, 3)), T.reshape(joints, (21, 3))
