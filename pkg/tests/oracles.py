"""Independent reference implementations used as test oracles.

Everything here is deliberately written against the package's math from
first principles (scipy rotations, homogeneous 4x4 chains, per-vertex double
loops) so a defect in the optimized paths cannot hide in the oracle.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation


def rotation_matrix(axis_angle: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(axis_angle, dtype=float)).as_matrix()


def naive_lbs(rig, params) -> np.ndarray:
    """Double-loop linear blend skinning with homogeneous joint transforms."""
    theta = params.theta.copy()
    phi = params.phi.copy()
    beta = params.beta
    mirror = params.side == "left"
    if mirror:
        theta = theta * np.array([1.0, -1.0, -1.0])
        phi = phi * np.array([1.0, -1.0, -1.0])

    shaped = rig.rest_vertices + rig.shape_blend @ beta
    jrest = rig.joint_regressor[:16] @ shaped
    locals_aa = np.vstack([phi[None, :], theta])

    world = [None] * 16
    for j in range(16):
        parent = rig.kinematic_tree[j]
        local = np.eye(4)
        local[:3, :3] = rotation_matrix(locals_aa[j])
        local[:3, 3] = jrest[j] if parent < 0 else jrest[j] - jrest[parent]
        world[j] = local if parent < 0 else world[parent] @ local

    verts = np.zeros_like(shaped)
    for v in range(shaped.shape[0]):
        acc = np.zeros(3)
        for j in range(16):
            w = rig.skinning_weights[v, j]
            if w == 0.0:
                continue
            rot = world[j][:3, :3]
            trans = world[j][:3, 3] - rot @ jrest[j]
            acc += w * (rot @ shaped[v] + trans)
        verts[v] = acc
    if mirror:
        verts = verts * np.array([-1.0, 1.0, 1.0])
    return verts


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Dense central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    for i in range(x.size):
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def tree_depths(parents: np.ndarray) -> np.ndarray:
    """Edge-count distance from the root for every node of a parent-array tree."""
    parents = np.asarray(parents)
    depths = np.full(len(parents), -1, dtype=int)
    for i in range(len(parents)):
        d = 0
        j = i
        while parents[j] >= 0:
            j = int(parents[j])
            d += 1
            if d > len(parents):
                raise ValueError("cycle in tree")
        depths[i] = d
    return depths


def random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform-ish random rotation matrices from normalized quaternions."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Rotation.from_quat(q).as_matrix()


def similarity_residual(pred, gt, rot, scale, trans) -> float:
    """Mean squared alignment residual for an explicit similarity transform."""
    aligned = scale * pred @ rot.T + trans
    return float(((aligned - gt) ** 2).sum())
