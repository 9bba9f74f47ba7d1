"""Training objectives: parameter, vertex, joint, and 3D perceptual terms.

Vertex and joint terms use the mean (not sum) of absolute per-coordinate
deviations so the loss weights stay scale-comparable between the 778-vertex
and 21-joint cases. The perceptual term compares frozen point-encoder
embeddings; its gradient reaches the predicted points only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..hand.params import HandParams
from .weights import get_point_encoder

__all__ = [
    "LossBreakdown",
    "loss_mano",
    "loss_vertices",
    "loss_joints",
    "phi_encode",
    "loss_3d",
    "total_loss",
]


def _as_tensor(x) -> T.Tensor:
    if isinstance(x, T.Tensor):
        return x
    if isinstance(x, HandParams):
        return T.Tensor(x.to_vector())
    return T.Tensor(np.asarray(x, dtype=np.float64))


def loss_mano(pred, gt) -> T.Tensor:
    """Squared L2 over the pose, shape, and orientation blocks, summed."""
    diff = T.sub(_as_tensor(pred), _as_tensor(gt))
    return T.sum_sq(diff)


def _mean_abs(pred, gt) -> T.Tensor:
    p, g = _as_tensor(pred), _as_tensor(gt)
    if p.shape != g.shape:
        raise T.ShapeMismatchError(f"loss: shapes {p.shape} and {g.shape} differ")
    return T.div(T.sum_abs(T.sub(p, g)), float(p.size))


def loss_vertices(pred_vertices, gt_vertices) -> T.Tensor:
    """Mean absolute per-coordinate vertex deviation (millimeters)."""
    return _mean_abs(pred_vertices, gt_vertices)


def loss_joints(pred_joints, gt_joints) -> T.Tensor:
    """Mean absolute per-coordinate joint deviation (millimeters)."""
    return _mean_abs(pred_joints, gt_joints)


def phi_encode(points) -> T.Tensor:
    """Frozen point-encoder embedding; (N, 3) -> (E,) or (B, N, 3) -> (B, E)."""
    pts = _as_tensor(points)
    single = pts.ndim == 2
    if single:
        pts = T.reshape(pts, (1,) + pts.shape)
    emb = get_point_encoder().encode(pts)
    return T.reshape(emb, (emb.shape[-1],)) if single else emb


def loss_3d(pred_points, gt_points) -> T.Tensor:
    """Squared L2 between frozen embeddings of the two point clouds."""
    return T.sum_sq(T.sub(phi_encode(pred_points), phi_encode(gt_points)))


@dataclass
class LossBreakdown:
    l_mano: float
    l_v: float
    l_3d: float
    l_j: float
    total: float
    weights: dict[str, float]
    mode: str


def total_loss(
    mode: str,
    lambdas: dict[str, float],
    l_mano: T.Tensor | None = None,
    l_v: T.Tensor | None = None,
    l_3d: T.Tensor | None = None,
    l_j: T.Tensor | None = None,
) -> tuple[T.Tensor, LossBreakdown]:
    """Weighted sum for the dataset mode; missing required terms error out.

    mano_supervised: total = lm*L_mano + lv*L_V + l3d*L_3D
    joints_only:     total = lj*L_J + l3d*L_3D
    """
    if mode == "mano_supervised":
        needed = {"l_mano": l_mano, "l_v": l_v, "l_3d": l_3d}
    elif mode == "joints_only":
        needed = {"l_j": l_j, "l_3d": l_3d}
    else:
        raise ValueError(f"unknown dataset mode {mode!r}")
    missing = [k for k, v in needed.items() if v is None]
    if missing:
        raise ValueError(f"mode {mode} needs terms {missing}")

    if mode == "mano_supervised":
        total = T.add(
            T.add(T.mul(l_mano, lambdas["mano"]), T.mul(l_v, lambdas["v"])),
            T.mul(l_3d, lambdas["3d"]),
        )
    else:
        total = T.add(T.mul(l_j, lambdas["j"]), T.mul(l_3d, lambdas["3d"]))

    breakdown = LossBreakdown(
        l_mano=float(l_mano.data) if l_mano is not None else 0.0,
        l_v=float(l_v.data) if l_v is not None else 0.0,
        l_3d=float(l_3d.data) if l_3d is not None else 0.0,
        l_j=float(l_j.data) if l_j is not None else 0.0,
        total=float(total.data),
        weights={
            "mano": float(lambdas["mano"]),
            "v": float(lambdas["v"]),
            "j": float(lambdas["j"]),
            "3d": float(lambdas["3d"]),
        },
        mode=mode,
    )
    return total, breakdown
