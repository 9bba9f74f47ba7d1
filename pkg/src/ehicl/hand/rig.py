"""Procedurally generated stand-in hand rig.

Licensed hand-model assets cannot ship with this package, so the rig is
synthesized deterministically from a seed: a closed tube mesh (778 vertices,
sphere topology, hence manifold by construction) is swept along a skeleton
tour of a palm plus five three-joint fingers. Skinning weights blend at most
two chain-adjacent joints, with the deeper joint always dominant, which keeps
the support of every joint rotation confined to its kinematic subtree.

Dimensions (778 vertices, 16 skinned joints, 21 reported joints, 10 shape
coefficients) were chosen so downstream code is drop-in compatible with the
usual parametric-hand conventions. The rig describes a right hand; left hands
are produced by mirroring at evaluation time.

Units are millimeters throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import seeded_rng
from ..serial import read_blob, write_blob

__all__ = [
    "HandRig",
    "build_rig",
    "save_rig",
    "load_rig",
    "edge_face_counts",
    "RIG_MAGIC",
    "N_VERTICES",
    "N_SKINNED_JOINTS",
    "N_REPORTED_JOINTS",
    "N_SHAPE_MODES",
]

RIG_MAGIC = "EHRIG1"
N_VERTICES = 778
N_SKINNED_JOINTS = 16
N_REPORTED_JOINTS = 21
N_SHAPE_MODES = 10

_N_RINGS = 97
_N_SPOKES = 8
_PARENTS = np.array([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14], dtype=np.int64)
# level sets of the finger chains (breadth-first, fingers in parallel)
FK_LEVELS = ([1, 4, 7, 10, 13], [2, 5, 8, 11, 14], [3, 6, 9, 12, 15])


@dataclass(eq=False)
class HandRig:
    """Immutable rig: rest mesh, skinning data and joint regressor."""

    rest_vertices: np.ndarray  # (778, 3) mm
    faces: np.ndarray  # (1552, 3) vertex indices
    kinematic_tree: np.ndarray  # (16,) parent per skinned joint, root = -1
    skinning_weights: np.ndarray  # (778, 16) convex rows
    shape_blend: np.ndarray  # (778, 3, 10) linear displacement basis
    joint_regressor: np.ndarray  # (21, 778) convex rows
    seed: int

    def __post_init__(self) -> None:
        for arr in (
            self.rest_vertices,
            self.faces,
            self.kinematic_tree,
            self.skinning_weights,
            self.shape_blend,
            self.joint_regressor,
        ):
            arr.setflags(write=False)

    @property
    def reported_parents(self) -> np.ndarray:
        """Parent indices for all 21 reported joints (tips hang off the chains)."""
        tips = np.array([3, 6, 9, 12, 15], dtype=np.int64)
        return np.concatenate([self.kinematic_tree, tips])

    def rest_joints(self) -> np.ndarray:
        """Regressed rest positions of the 16 skinned joints."""
        return self.joint_regressor[:N_SKINNED_JOINTS] @ self.rest_vertices


def edge_face_counts(faces: np.ndarray) -> dict[tuple[int, int], int]:
    """How many faces share each undirected edge (2 everywhere iff manifold)."""
    counts: dict[tuple[int, int], int] = {}
    for tri in np.asarray(faces):
        a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            counts[key] = counts.get(key, 0) + 1
    return counts


def _skeleton(rng: np.random.Generator):
    """Rest skeleton: joint positions, tip points, and palm geometry."""
    spread = np.deg2rad(np.array([-58.0, -16.0, 0.0, 15.0, 33.0]))
    palm_len = np.array([46.0, 84.0, 90.0, 85.0, 74.0])
    seg_len = np.array(
        [
            [34.0, 28.0, 22.0],
            [40.0, 25.0, 18.0],
            [44.0, 28.0, 20.0],
            [40.0, 26.0, 19.0],
            [32.0, 20.0, 16.0],
        ]
    )
    palm_len = palm_len * (1.0 + 0.03 * rng.standard_normal(5))
    seg_len = seg_len * (1.0 + 0.04 * rng.standard_normal((5, 3)))
    joints = np.zeros((N_SKINNED_JOINTS, 3))
    tips = np.zeros((5, 3))
    for f in range(5):
        direction = np.array([np.cos(spread[f]), np.sin(spread[f]), 0.0])
        mcp = palm_len[f] * direction
        joints[1 + 3 * f] = mcp
        joints[2 + 3 * f] = mcp + seg_len[f, 0] * direction
        joints[3 + 3 * f] = mcp + (seg_len[f, 0] + seg_len[f, 1]) * direction
        tips[f] = mcp + seg_len[f].sum() * direction
    return joints, tips


def _tour_legs(joints: np.ndarray, tips: np.ndarray):
    """Polyline tour visiting every bone; each leg carries a skinning rule.

    A rule is (joint_a, joint_b, reversed): vertices on the leg blend between
    the two joints with the deeper joint dominant; joint_b == -1 pins all
    weight on joint_a.
    """
    heel_in = np.array([-26.0, 0.0, 0.0])
    heel_out = np.array([-26.0, 0.0, -1.5])
    wrist = joints[0]
    legs = [(heel_in, wrist, (0, -1, False), (16.0, 18.0))]
    for f in range(5):
        mcp, pip, dip = 1 + 3 * f, 2 + 3 * f, 3 + 3 * f
        jm, jp, jd, jt = joints[mcp], joints[pip], joints[dip], tips[f]
        legs += [
            (wrist, jm, (0, mcp, False), (18.0, 10.0)),
            (jm, jp, (mcp, pip, False), (9.5, 8.0)),
            (jp, jd, (pip, dip, False), (8.0, 7.0)),
            (jd, jt, (dip, -1, False), (7.0, 3.0)),
            (jt, jd, (dip, -1, True), (3.0, 7.0)),
            (jd, jp, (pip, dip, True), (7.0, 8.0)),
            (jp, jm, (mcp, pip, True), (8.0, 9.5)),
            (jm, wrist, (0, mcp, True), (10.0, 18.0)),
        ]
    legs.append((wrist, heel_out, (0, -1, False), (18.0, 16.0)))
    return legs, heel_in, heel_out


def _leg_weights(rule, t: float) -> np.ndarray:
    """Skinning weights for a point at parameter t in [0, 1] along a leg."""
    a, b, rev = rule
    w = np.zeros(N_SKINNED_JOINTS)
    if b < 0:
        w[a] = 1.0
        return w
    u = 1.0 - t if rev else t
    if a == 0:
        # palm leg: wrist -> knuckle, knuckle takes over gradually
        wb = 0.2 + 0.6 * u
    else:
        # finger leg: the deeper joint stays strictly dominant so a joint's
        # rotation moves only vertices whose dominant weight lies in its subtree
        wb = 0.55 + 0.45 * u
    w[a] = 1.0 - wb
    w[b] = wb
    return w


def _tube_mesh(legs, heel_in, heel_out, rng):
    """Sweep rings along the tour; cap both ends. Sphere topology, manifold."""
    starts = np.array([leg[0] for leg in legs])
    ends = np.array([leg[1] for leg in legs])
    lengths = np.linalg.norm(ends - starts, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    total = cum[-1]

    verts = np.zeros((N_VERTICES, 3))
    weights = np.zeros((N_VERTICES, N_SKINNED_JOINTS))
    verts[0] = heel_in
    weights[0, 0] = 1.0
    verts[-1] = heel_out
    weights[-1, 0] = 1.0

    z_axis = np.array([0.0, 0.0, 1.0])
    x_axis = np.array([1.0, 0.0, 0.0])
    for i in range(_N_RINGS):
        s = total * (i + 0.5) / _N_RINGS
        leg_idx = min(np.searchsorted(cum, s, side="right") - 1, len(legs) - 1)
        t = (s - cum[leg_idx]) / max(lengths[leg_idx], 1e-9)
        start, end, rule, (r0, r1) = legs[leg_idx]
        center = start + t * (end - start)
        radius = r0 + t * (r1 - r0)
        tangent = (end - start) / max(lengths[leg_idx], 1e-9)
        n1 = np.cross(tangent, z_axis)
        if np.linalg.norm(n1) < 1e-6:
            n1 = np.cross(tangent, x_axis)
        n1 /= np.linalg.norm(n1)
        n2 = np.cross(tangent, n1)
        ring_w = _leg_weights(rule, t)
        for j in range(_N_SPOKES):
            ang = 2.0 * np.pi * j / _N_SPOKES
            rj = radius + 0.3 * rng.standard_normal()
            vid = 1 + i * _N_SPOKES + j
            verts[vid] = center + rj * (np.cos(ang) * n1 + np.sin(ang) * n2)
            weights[vid] = ring_w

    faces = []
    for j in range(_N_SPOKES):
        faces.append((0, 1 + j, 1 + (j + 1) % _N_SPOKES))
    for i in range(_N_RINGS - 1):
        base_a = 1 + i * _N_SPOKES
        base_b = base_a + _N_SPOKES
        for j in range(_N_SPOKES):
            jn = (j + 1) % _N_SPOKES
            faces.append((base_a + j, base_a + jn, base_b + j))
            faces.append((base_a + jn, base_b + jn, base_b + j))
    last = 1 + (_N_RINGS - 1) * _N_SPOKES
    for j in range(_N_SPOKES):
        faces.append((N_VERTICES - 1, last + (j + 1) % _N_SPOKES, last + j))
    return verts, weights, np.array(faces, dtype=np.int64)


def _joint_regressor(verts, joints, tips):
    """Convex rows: gaussian weights over the nearest vertices to each joint."""
    targets = np.vstack([joints, tips])
    reg = np.zeros((N_REPORTED_JOINTS, N_VERTICES))
    for j, target in enumerate(targets):
        d = np.linalg.norm(verts - target, axis=1)
        k = 24 if j < N_SKINNED_JOINTS else 8
        nearest = np.argsort(d)[:k]
        w = np.exp(-(d[nearest] ** 2) / (2.0 * 10.0**2))
        w = np.maximum(w, 1e-12)
        reg[j, nearest] = w / w.sum()
    return reg


def _shape_basis(verts, rng):
    """Ten linear displacement modes, roughly millimeter-scale per unit coefficient."""
    basis = np.zeros((N_VERTICES, 3, N_SHAPE_MODES))
    centered = verts - verts.mean(axis=0)
    for k in range(N_SHAPE_MODES):
        lin = 0.006 * rng.standard_normal((3, 3))
        offset = 0.4 * rng.standard_normal(3)
        basis[:, :, k] = centered @ lin.T + offset
    return basis


def build_rig(seed: int) -> HandRig:
    """Deterministic rig for a seed; same seed yields bit-identical arrays."""
    rng = seeded_rng(seed)
    joints, tips = _skeleton(rng)
    legs, heel_in, heel_out = _tour_legs(joints, tips)
    verts, weights, faces = _tube_mesh(legs, heel_in, heel_out, rng)
    weights = weights / weights.sum(axis=1, keepdims=True)
    reg = _joint_regressor(verts, joints, tips)
    blend = _shape_basis(verts, rng)
    return HandRig(
        rest_vertices=verts,
        faces=faces,
        kinematic_tree=_PARENTS.copy(),
        skinning_weights=weights,
        shape_blend=blend,
        joint_regressor=reg,
        seed=int(seed),
    )


def save_rig(path, rig: HandRig) -> None:
    write_blob(
        path,
        RIG_MAGIC,
        {"seed": rig.seed, "version": 1},
        {
            "rest_vertices": rig.rest_vertices,
            "faces": rig.faces,
            "kinematic_tree": rig.kinematic_tree,
            "skinning_weights": rig.skinning_weights,
            "shape_blend": rig.shape_blend,
            "joint_regressor": rig.joint_regressor,
        },
    )


def load_rig(path) -> HandRig:
    meta, arrays = read_blob(path, RIG_MAGIC)
    return HandRig(
        rest_vertices=arrays["rest_vertices"],
        faces=arrays["faces"],
        kinematic_tree=arrays["kinematic_tree"],
        skinning_weights=arrays["skinning_weights"],
        shape_blend=arrays["shape_blend"],
        joint_regressor=arrays["joint_regressor"],
        seed=int(meta["seed"]),
    )
