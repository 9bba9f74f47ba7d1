"""Evaluation suite: similarity alignment, position errors, aggregation.

Alignment is the full similarity transform (rotation + translation + uniform
scale) from the closed-form centered-SVD solution, reflection excluded. That
convention is applied independently per hand, on joints for joint metrics and
on vertices for vertex metrics. All distances are millimeters.

Aggregation has two settings: ``general`` averages over every detected hand,
``bimanual`` keeps only samples with both hands detected and adds the
relative-root error (root joint = wrist, reported joint 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AlignmentResult",
    "DegenerateConfigurationError",
    "MissingHandError",
    "procrustes_align",
    "mpjpe",
    "mpvpe",
    "f_score",
    "mrrpe",
    "hand_eval",
    "HandEval",
    "SampleEval",
    "MetricReport",
    "aggregate",
]


class DegenerateConfigurationError(ValueError):
    """Reference points are too degenerate to define an alignment."""


class MissingHandError(ValueError):
    """A bimanual quantity was requested with a hand missing."""


@dataclass
class AlignmentResult:
    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    scale: float
    translation: np.ndarray  # (3,)
    aligned_points: np.ndarray  # (N, 3), scale * R @ p + t

    @property
    def residual(self) -> float:
        return float(self._residual)

    _residual: float = field(default=0.0, repr=False)


def _as_points(name: str, arr) -> np.ndarray:
    pts = np.asarray(arr, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must be (N, 3), got {pts.shape}")
    return pts


def procrustes_align(pred, gt) -> AlignmentResult:
    """Similarity transform minimizing sum ||s R p_i + t - g_i||^2."""
    pred = _as_points("pred", pred)
    gt = _as_points("gt", gt)
    if pred.shape != gt.shape:
        raise ValueError(f"point sets differ: {pred.shape} vs {gt.shape}")
    n = pred.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")

    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    x = pred - mu_p
    y = gt - mu_g

    sv = np.linalg.svd(y, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-30):
        raise DegenerateConfigurationError(
            "gt configuration has rank < 2 after centering; alignment undefined"
        )
    var_p = float((x * x).sum()) / n
    if var_p <= 1e-18:
        raise DegenerateConfigurationError("pred points are coincident; scale undefined")

    cov = (y.T @ x) / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        sign[2] = -1.0  # exclude reflections via the smallest singular vector
    rotation = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_p)
    translation = mu_g - scale * rotation @ mu_p
    aligned = scale * pred @ rotation.T + translation
    res = float(((aligned - gt) ** 2).sum())
    return AlignmentResult(rotation, scale, translation, aligned, _residual=res)


def _position_error(pred, gt, aligned: bool) -> float:
    pred = _as_points("pred", pred)
    gt = _as_points("gt", gt)
    if pred.shape != gt.shape:
        raise ValueError(f"point sets differ: {pred.shape} vs {gt.shape}")
    if aligned:
        pred = procrustes_align(pred, gt).aligned_points
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def mpjpe(pred_joints, gt_joints, aligned: bool = False) -> float:
    """Mean per-joint position error, optionally after similarity alignment."""
    return _position_error(pred_joints, gt_joints, aligned)


def mpvpe(pred_vertices, gt_vertices, aligned: bool = False) -> float:
    """Mean per-vertex position error, optionally after similarity alignment."""
    return _position_error(pred_vertices, gt_vertices, aligned)


def f_score(pred, gt, threshold: float, aligned: bool = True) -> float:
    """Fraction of points within `threshold` mm (post-alignment by default)."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    pred = _as_points("pred", pred)
    gt = _as_points("gt", gt)
    if pred.shape != gt.shape:
        raise ValueError(f"point sets differ: {pred.shape} vs {gt.shape}")
    if aligned:
        pred = procrustes_align(pred, gt).aligned_points
    d = np.linalg.norm(pred - gt, axis=1)
    return float((d <= threshold).mean())


def mrrpe(pred_left_root, pred_right_root, gt_left_root, gt_right_root) -> float:
    """Norm of the error in the left-to-right wrist offset vector."""
    roots = [pred_left_root, pred_right_root, gt_left_root, gt_right_root]
    if any(r is None for r in roots):
        raise MissingHandError("mrrpe needs both hands; sample excluded from bimanual")
    pl, pr, gl, gr = (np.asarray(r, dtype=np.float64).reshape(3) for r in roots)
    return float(np.linalg.norm((pl - pr) - (gl - gr)))


# ----------------------------------------------------------------- reports


@dataclass
class HandEval:
    """Per-hand metric entries for one sample."""

    detected: bool
    mpjpe: float
    p_mpjpe: float
    mpvpe: float
    p_mpvpe: float
    f_at: dict[float, float]

    def as_dict(self) -> dict:
        out = {
            "detected": self.detected,
            "mpjpe": self.mpjpe,
            "p_mpjpe": self.p_mpjpe,
            "mpvpe": self.mpvpe,
            "p_mpvpe": self.p_mpvpe,
        }
        for t, v in sorted(self.f_at.items()):
            out[f"f@{t:g}"] = v
        return out


@dataclass
class SampleEval:
    sample_id: str
    hands: dict[str, HandEval]  # keys in {"left", "right"}
    mrrpe: float | None = None  # set when both hands present and detected


def hand_eval(
    pred_vertices,
    pred_joints,
    gt_vertices,
    gt_joints,
    thresholds=(5.0, 15.0),
    detected: bool = True,
    f_aligned: bool = True,
) -> HandEval:
    """All per-hand metrics for one prediction/ground-truth pair."""
    return HandEval(
        detected=detected,
        mpjpe=mpjpe(pred_joints, gt_joints, aligned=False),
        p_mpjpe=mpjpe(pred_joints, gt_joints, aligned=True),
        mpvpe=mpvpe(pred_vertices, gt_vertices, aligned=False),
        p_mpvpe=mpvpe(pred_vertices, gt_vertices, aligned=True),
        f_at={float(t): f_score(pred_vertices, gt_vertices, t, aligned=f_aligned) for t in thresholds},
    )


_METRIC_KEYS = ("mpjpe", "p_mpjpe", "mpvpe", "p_mpvpe")


@dataclass
class MetricReport:
    """Aggregate of per-sample metrics under one evaluation setting."""

    setting: str
    n_samples: int
    n_hands: int
    n_excluded: int
    empty: bool
    means: dict[str, float] | None
    per_sample: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "setting": self.setting,
            "n_samples": self.n_samples,
            "n_hands": self.n_hands,
            "n_excluded": self.n_excluded,
            "empty": self.empty,
            "means": self.means,
            "per_sample": self.per_sample,
        }


def aggregate(samples: list[SampleEval], setting: str) -> MetricReport:
    """Mean metrics per setting; an empty filtered set is marked, not zeroed."""
    if setting not in ("general", "bimanual"):
        raise ValueError(f"unknown setting {setting!r}")

    if setting == "general":
        rows = []
        excluded = 0
        per_sample = {}
        for s in samples:
            entry = {}
            for side, h in sorted(s.hands.items()):
                if h.detected:
                    rows.append(h)
                    entry[side] = h.as_dict()
                else:
                    excluded += 1
            if entry:
                per_sample[s.sample_id] = entry
        if not rows:
            return MetricReport(setting, len(samples), 0, excluded, True, None)
        means = _mean_over(rows)
        return MetricReport(setting, len(samples), len(rows), excluded, False, means, per_sample)

    rows = []
    mrrpes = []
    excluded = 0
    per_sample = {}
    for s in samples:
        if set(s.hands.keys()) != {"left", "right"}:
            continue  # not a two-hand sample; out of scope for bimanual
        if not all(h.detected for h in s.hands.values()):
            excluded += 1
            continue
        rows.extend(s.hands.values())
        entry = {side: h.as_dict() for side, h in sorted(s.hands.items())}
        if s.mrrpe is not None:
            mrrpes.append(s.mrrpe)
            entry["mrrpe"] = s.mrrpe
        per_sample[s.sample_id] = entry
    if not rows:
        return MetricReport(setting, len(samples), 0, excluded, True, None)
    means = _mean_over(rows)
    if mrrpes:
        means["mrrpe"] = float(np.mean(mrrpes))
    return MetricReport(
        setting, len(per_sample), len(rows), excluded, False, means, per_sample
    )


def _mean_over(rows: list[HandEval]) -> dict[str, float]:
    means = {k: float(np.mean([getattr(h, k) for h in rows])) for k in _METRIC_KEYS}
    thresholds = sorted({t for h in rows for t in h.f_at})
    for t in thresholds:
        vals = [h.f_at[t] for h in rows if t in h.f_at]
        means[f"f@{t:g}"] = float(np.mean(vals))
    return means
