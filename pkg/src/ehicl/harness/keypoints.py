"""Keypoint-file ingestion: evaluate external 21x3 predictions directly.

Input is JSON lines, one sample per line:

    {"id": "frame-001",
     "left":  {"pred": [[x,y,z], ...21], "gt": [[...]], "detected": true},
     "right": {...}}

Hands may be omitted; "detected" defaults to true. Joint-level metrics plus
F-scores over joints are aggregated under the general and bimanual settings,
so external predictions flow through the metrics module without the
synthetic pipeline.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..metrics import SampleEval, HandEval, aggregate, f_score, mpjpe, mrrpe
from .errors import DataError

__all__ = ["evaluate_keypoint_file"]


def _hand_entry(sample_id, side, entry, thresholds):
    try:
        pred = np.asarray(entry["pred"], dtype=np.float64)
        gt = np.asarray(entry["gt"], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{sample_id}/{side}: bad keypoint entry: {exc}") from exc
    if pred.shape != (21, 3) or gt.shape != (21, 3):
        raise DataError(
            f"{sample_id}/{side}: keypoints must be 21x3, got {pred.shape} and {gt.shape}"
        )
    unaligned = mpjpe(pred, gt, aligned=False)
    alignedv = mpjpe(pred, gt, aligned=True)
    # vertex-level fields mirror the joint values: joints are the only geometry
    return (
        HandEval(
            detected=bool(entry.get("detected", True)),
            mpjpe=unaligned,
            p_mpjpe=alignedv,
            mpvpe=unaligned,
            p_mpvpe=alignedv,
            f_at={float(t): f_score(pred, gt, float(t), aligned=True) for t in thresholds},
        ),
        pred[0],
        gt[0],
    )


def evaluate_keypoint_file(path, thresholds=(10.0, 15.0)) -> dict:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    samples = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        sid = str(raw.get("id", f"line-{lineno}"))
        hands = {}
        roots = {}
        for side in ("left", "right"):
            if side in raw:
                hands[side], pred_root, gt_root = _hand_entry(sid, side, raw[side], thresholds)
                roots[side] = (pred_root, gt_root)
        if not hands:
            raise DataError(f"{path}:{lineno}: sample {sid} has no hands")
        rel = None
        if set(hands) == {"left", "right"} and all(h.detected for h in hands.values()):
            rel = mrrpe(roots["left"][0], roots["right"][0], roots["left"][1], roots["right"][1])
        samples.append(SampleEval(sid, hands, rel))
    if not samples:
        raise DataError(f"{path}: no samples found")
    return {
        "source": str(path),
        "n_samples": len(samples),
        "general": aggregate(samples, "general").as_dict(),
        "bimanual": aggregate(samples, "bimanual").as_dict(),
    }
