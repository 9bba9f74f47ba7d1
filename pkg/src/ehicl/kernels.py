"""Hot numeric kernels for the non-differentiable geometry path.

Axis-angle batches, kinematic-chain composition and vertex skinning dominate
corpus generation and evaluation, so they come in two interchangeable
backends: numba-jitted loops (used when numba imports) and vectorized numpy.

Select with the environment variable EHICL_NUMBA:
  EHICL_NUMBA=0   force the pure-numpy path
  EHICL_NUMBA=1   require numba (ImportError if missing)
  unset           numba when available, numpy otherwise

``bench/bench_kernels.py`` times the two backends against each other.

The differentiable forward in ``ehicl.hand.forward`` re-expresses the same
math as tape ops; tests pin both paths to each other and to a naive
double-loop oracle.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "active_backend",
    "rodrigues_batch",
    "fk_chain",
    "skin_vertices",
    "posed_vertices",
    "phi_pool",
    "phi_pool_backward",
]

_SMALL_ANGLE_SQ = 1e-16  # below this, sin/cos ratios use their series forms


def _numpy_rodrigues_batch(axis_angle: np.ndarray) -> np.ndarray:
    a = np.asarray(axis_angle, dtype=np.float64)
    n = a.shape[0]
    sq = (a * a).sum(axis=1)
    small = sq < _SMALL_ANGLE_SQ
    sq_safe = np.where(small, 1.0, sq)
    th = np.sqrt(sq_safe)
    s1 = np.where(small, 1.0 - sq / 6.0, np.sin(th) / th)
    s2 = np.where(small, 0.5 - sq / 24.0, (1.0 - np.cos(th)) / sq_safe)
    c = np.where(small, 1.0 - sq / 2.0, np.cos(th))
    out = np.zeros((n, 3, 3), dtype=np.float64)
    out[:, 0, 0] = out[:, 1, 1] = out[:, 2, 2] = c
    kx, ky, kz = a[:, 0], a[:, 1], a[:, 2]
    out[:, 0, 1] += -s1 * kz
    out[:, 0, 2] += s1 * ky
    out[:, 1, 0] += s1 * kz
    out[:, 1, 2] += -s1 * kx
    out[:, 2, 0] += -s1 * ky
    out[:, 2, 1] += s1 * kx
    out += s2[:, None, None] * (a[:, :, None] * a[:, None, :])
    return out


def _numpy_fk_chain(rots, joints, parents):
    """World rotations plus skinning translations u.

    u is accumulated as u_child = u_parent + R_parent j_child - R_child j_child,
    which is algebraically the usual world-position-minus-rotated-rest-joint
    term but evaluates to exactly zero at the identity pose.
    """
    n = rots.shape[0]
    wrot = np.empty_like(rots)
    u = np.empty_like(joints)
    for j in range(n):
        p = parents[j]
        if p < 0:
            wrot[j] = rots[j]
            u[j] = joints[j] - wrot[j] @ joints[j]
        else:
            wrot[j] = wrot[p] @ rots[j]
            u[j] = u[p] + wrot[p] @ joints[j] - wrot[j] @ joints[j]
    return wrot, u


def _numpy_skin_vertices(shaped, weights, wrot, u):
    # delta form keeps the identity pose bit-exact even though weight-row
    # sums only reach 1.0 to rounding
    delta = wrot - np.eye(3)[None, :, :]
    rv = np.einsum("vj,jab->vab", weights, delta)
    tv = weights @ u
    return shaped + np.einsum("vab,vb->va", rv, shaped) + tv


def _numpy_phi_pool(points, w1, b1, scale):
    """Centered, scaled, linearly projected points, tanh'd and max-pooled.

    Returns pooled activations (M, H) and the argmax point index per channel;
    tanh is monotone, so pooling the pre-activations is equivalent.
    """
    centered = (points - points.mean(axis=1, keepdims=True)) * scale
    pre = centered @ w1 + b1  # (M, N, H)
    idx = np.argmax(pre, axis=1)  # (M, H)
    top = np.take_along_axis(pre, idx[:, None, :], axis=1)[:, 0, :]
    return np.tanh(top), idx


def phi_pool_backward(g, y, idx, w1, scale, n_points):
    """Gradient of the pooled features with respect to the input points."""
    a = g * (1.0 - y * y)  # (M, H)
    mean_term = a @ w1.T  # (M, 3)
    m, h = a.shape
    gp = np.zeros((m, n_points, 3))
    rows = np.arange(m)
    for k in range(h):
        contrib = a[:, k : k + 1] * w1[:, k][None, :]  # (M, 3)
        np.add.at(gp, (rows, idx[:, k]), contrib)
    gp -= mean_term[:, None, :] / n_points  # centering spreads -1/N everywhere
    gp *= scale
    return gp


_backend = "numpy"
rodrigues_batch = _numpy_rodrigues_batch
fk_chain = _numpy_fk_chain
skin_vertices = _numpy_skin_vertices
phi_pool = _numpy_phi_pool


def _env_flag():
    v = os.environ.get("EHICL_NUMBA", "").strip().lower()
    if v in ("0", "false", "no", "off"):
        return False
    if v in ("1", "true", "yes", "on"):
        return True
    return None


_want = _env_flag()
if _want is not False:
    try:
        from numba import njit

        @njit(cache=True)
        def _nb_rodrigues_batch(axis_angle):
            n = axis_angle.shape[0]
            out = np.empty((n, 3, 3), dtype=np.float64)
            for i in range(n):
                ax, ay, az = axis_angle[i, 0], axis_angle[i, 1], axis_angle[i, 2]
                sq = ax * ax + ay * ay + az * az
                if sq < _SMALL_ANGLE_SQ:
                    s1 = 1.0 - sq / 6.0
                    s2 = 0.5 - sq / 24.0
                    c = 1.0 - sq / 2.0
                else:
                    th = np.sqrt(sq)
                    s1 = np.sin(th) / th
                    s2 = (1.0 - np.cos(th)) / sq
                    c = np.cos(th)
                out[i, 0, 0] = c + s2 * ax * ax
                out[i, 0, 1] = -s1 * az + s2 * ax * ay
                out[i, 0, 2] = s1 * ay + s2 * ax * az
                out[i, 1, 0] = s1 * az + s2 * ay * ax
                out[i, 1, 1] = c + s2 * ay * ay
                out[i, 1, 2] = -s1 * ax + s2 * ay * az
                out[i, 2, 0] = -s1 * ay + s2 * az * ax
                out[i, 2, 1] = s1 * ax + s2 * az * ay
                out[i, 2, 2] = c + s2 * az * az
            return out

        @njit(cache=True)
        def _nb_fk_chain(rots, joints, parents):
            n = rots.shape[0]
            wrot = np.empty((n, 3, 3), dtype=np.float64)
            u = np.empty((n, 3), dtype=np.float64)
            for j in range(n):
                p = parents[j]
                if p < 0:
                    for r in range(3):
                        for cth in range(3):
                            wrot[j, r, cth] = rots[j, r, cth]
                    for r in range(3):
                        acc = 0.0
                        for k in range(3):
                            acc += wrot[j, r, k] * joints[j, k]
                        u[j, r] = joints[j, r] - acc
                else:
                    for r in range(3):
                        for cth in range(3):
                            acc = 0.0
                            for k in range(3):
                                acc += wrot[p, r, k] * rots[j, k, cth]
                            wrot[j, r, cth] = acc
                    for r in range(3):
                        accp = 0.0
                        accj = 0.0
                        for k in range(3):
                            accp += wrot[p, r, k] * joints[j, k]
                            accj += wrot[j, r, k] * joints[j, k]
                        u[j, r] = u[p, r] + accp - accj
            return wrot, u

        @njit(cache=True)
        def _nb_skin_vertices(shaped, weights, wrot, u):
            nv = shaped.shape[0]
            nj = weights.shape[1]
            out = np.empty((nv, 3), dtype=np.float64)
            for v in range(nv):
                for r in range(3):
                    out[v, r] = shaped[v, r]
                for j in range(nj):
                    w = weights[v, j]
                    if w == 0.0:
                        continue
                    for r in range(3):
                        acc = u[j, r]
                        for k in range(3):
                            d = wrot[j, r, k]
                            if r == k:
                                d -= 1.0
                            acc += d * shaped[v, k]
                        out[v, r] += w * acc
            return out

        @njit(cache=True)
        def _nb_phi_pool(points, w1, b1, scale):
            m, n, _ = points.shape
            h = w1.shape[1]
            y = np.empty((m, h), dtype=np.float64)
            idx = np.empty((m, h), dtype=np.int64)
            for i in range(m):
                cx = cy = cz = 0.0
                for j in range(n):
                    cx += points[i, j, 0]
                    cy += points[i, j, 1]
                    cz += points[i, j, 2]
                cx /= n
                cy /= n
                cz /= n
                for k in range(h):
                    y[i, k] = -np.inf
                    idx[i, k] = 0
                for j in range(n):
                    px = (points[i, j, 0] - cx) * scale
                    py = (points[i, j, 1] - cy) * scale
                    pz = (points[i, j, 2] - cz) * scale
                    for k in range(h):
                        v = px * w1[0, k] + py * w1[1, k] + pz * w1[2, k] + b1[k]
                        if v > y[i, k]:
                            y[i, k] = v
                            idx[i, k] = j
                for k in range(h):
                    y[i, k] = np.tanh(y[i, k])
            return y, idx

        rodrigues_batch = _nb_rodrigues_batch
        fk_chain = _nb_fk_chain
        skin_vertices = _nb_skin_vertices
        phi_pool = _nb_phi_pool
        _backend = "numba"
    except ImportError:
        if _want is True:
            raise


def active_backend() -> str:
    """Name of the kernel backend in use: 'numba' or 'numpy'."""
    return _backend


def posed_vertices(
    shaped: np.ndarray,
    weights: np.ndarray,
    axis_angle: np.ndarray,
    jrest: np.ndarray,
    parents: np.ndarray,
) -> np.ndarray:
    """Full skinning pass: local rotations -> chain transforms -> vertices."""
    rots = rodrigues_batch(np.ascontiguousarray(axis_angle, dtype=np.float64))
    wrot, u = fk_chain(rots, np.ascontiguousarray(jrest, dtype=np.float64),
                       np.ascontiguousarray(parents, dtype=np.int64))
    return skin_vertices(
        np.ascontiguousarray(shaped, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        wrot,
        u,
    )
