"""Seeded random streams; one integer seed reproduces every draw bit-exactly."""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["seeded_rng", "derive_rng", "tag_int"]


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 stream: uniform, normal, permutation and friends."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def tag_int(tag) -> int:
    """Stable integer for a string tag (crc32; not security-sensitive)."""
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Independent substream identified by (seed, tags); order matters."""
    entropy = [int(seed)] + [tag_int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
