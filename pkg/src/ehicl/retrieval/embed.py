"""Deterministic hashed bag-of-tokens text embedding.

Lowercase, split on anything that is not a letter or digit, hash each token
into one of 256 buckets (crc32), accumulate counts, L2-normalize. Desk-scale
stand-in for a text encoder: identical texts embed identically and token
overlap drives cosine similarity.
"""

from __future__ import annotations

import re
import zlib

import numpy as np

__all__ = ["embed_text", "cosine_similarity", "token_bucket", "EMBED_DIM"]

EMBED_DIM = 256
_SPLIT = re.compile(r"[^a-z0-9]+")


def token_bucket(token: str, dim: int = EMBED_DIM) -> int:
    return zlib.crc32(token.encode("utf-8")) % dim


def embed_text(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    if not isinstance(text, str) or not text.strip():
        raise ValueError("cannot embed empty text")
    tokens = [t for t in _SPLIT.split(text.lower()) if t]
    if not tokens:
        raise ValueError("cannot embed text with no tokens")
    vec = np.zeros(dim)
    for tok in tokens:
        vec[token_bucket(tok, dim)] += 1.0
    return vec / np.linalg.norm(vec)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(a @ b / (na * nb))
