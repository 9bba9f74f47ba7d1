"""Retrieval-quality analysis: bin query-template similarity vs refinement gain."""

from __future__ import annotations

import numpy as np

__all__ = ["bin_similarity_gain"]


def bin_similarity_gain(similarities, gains, edges=None) -> list[dict]:
    """Histogram of cosine similarity with the mean gain per bin.

    Bins are [lo, hi) except the last, which is closed; similarities are
    clipped into [edges[0], edges[-1]]. Empty bins report mean_gain None.
    """
    sims = np.asarray(similarities, dtype=np.float64)
    gain = np.asarray(gains, dtype=np.float64)
    if sims.shape != gain.shape:
        raise ValueError(f"similarity/gain length mismatch: {sims.shape} vs {gain.shape}")
    edges = np.linspace(0.0, 1.0, 11) if edges is None else np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be a strictly increasing 1-d grid")
    clipped = np.clip(sims, edges[0], edges[-1])
    idx = np.minimum(np.searchsorted(edges, clipped, side="right") - 1, len(edges) - 2)
    out = []
    for b in range(len(edges) - 1):
        mask = idx == b
        count = int(mask.sum())
        out.append(
            {
                "lo": float(edges[b]),
                "hi": float(edges[b + 1]),
                "count": count,
                "mean_gain": float(gain[mask].mean()) if count else None,
            }
        )
    return out
