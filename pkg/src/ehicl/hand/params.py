"""Hand parameter triple: joint rotations, shape coefficients, orientation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["HandParams", "wrap_axis_angle", "mirror_params", "PARAM_VECTOR_DIM"]

TWO_PI = 2.0 * np.pi
N_POSE_JOINTS = 15
N_SHAPE = 10
PARAM_VECTOR_DIM = N_POSE_JOINTS * 3 + N_SHAPE + 3  # 58

# Mirroring across the x=0 plane conjugates rotations: axis (x,y,z) -> (x,-y,-z).
_MIRROR_AA = np.array([1.0, -1.0, -1.0])


def wrap_axis_angle(rows: np.ndarray) -> np.ndarray:
    """Rescale axis-angle rows with norm >= 2*pi onto the equivalent rotation."""
    rows = np.asarray(rows, dtype=np.float64)
    single = rows.ndim == 1
    out = np.atleast_2d(rows).copy()
    norms = np.linalg.norm(out, axis=-1)
    over = norms >= TWO_PI
    if np.any(over):
        wrapped = np.mod(norms[over], TWO_PI)
        out[over] *= (wrapped / norms[over])[:, None]
    return out[0] if single else out


@dataclass
class HandParams:
    """Pose (15x3 axis-angle), shape (10), global orientation (3), side.

    Axis-angle rows are wrapped below 2*pi on construction; all entries must
    be finite.
    """

    theta: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    side: str = "right"

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        phi = np.asarray(self.phi, dtype=np.float64)
        if theta.shape != (N_POSE_JOINTS, 3):
            raise ValueError(f"theta must be ({N_POSE_JOINTS}, 3), got {theta.shape}")
        if beta.shape != (N_SHAPE,):
            raise ValueError(f"beta must be ({N_SHAPE},), got {beta.shape}")
        if phi.shape != (3,):
            raise ValueError(f"phi must be (3,), got {phi.shape}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(beta)) and np.all(np.isfinite(phi))):
            raise ValueError("hand parameters must be finite")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        self.theta = wrap_axis_angle(theta)
        self.beta = beta.copy()
        self.phi = wrap_axis_angle(phi)

    @classmethod
    def zeros(cls, side: str = "right") -> "HandParams":
        return cls(np.zeros((N_POSE_JOINTS, 3)), np.zeros(N_SHAPE), np.zeros(3), side)

    def to_vector(self) -> np.ndarray:
        """Flatten to [theta (45), beta (10), phi (3)]."""
        return np.concatenate([self.theta.ravel(), self.beta, self.phi])

    @classmethod
    def from_vector(cls, vec: np.ndarray, side: str) -> "HandParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (PARAM_VECTOR_DIM,):
            raise ValueError(f"parameter vector must be ({PARAM_VECTOR_DIM},), got {vec.shape}")
        return cls(vec[:45].reshape(15, 3), vec[45:55], vec[55:58], side)

    def copy(self) -> "HandParams":
        return HandParams(self.theta.copy(), self.beta.copy(), self.phi.copy(), self.side)


def mirror_params(params: HandParams) -> HandParams:
    """Counterpart parameters for the opposite hand (x-plane mirror)."""
    return HandParams(
        params.theta * _MIRROR_AA,
        params.beta,
        params.phi * _MIRROR_AA,
        "left" if params.side == "right" else "right",
    )
