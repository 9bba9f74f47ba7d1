"""Learnable pipeline weights and the frozen point encoder.

Every learnable parameter is registered by name in one ordered dict, which is
what the optimizer and the checkpoint writer consume. The decoder's output
layer starts at zero so refinement begins exactly at the coarse estimate.

The point encoder used by the 3D perceptual loss is built once from a fixed
seed and never registered for optimization; gradients flow to the points it
embeds, not to its weights.
"""

from __future__ import annotations

import logging

import numpy as np

from .. import kernels
from .. import tensor as T
from ..rng import derive_rng

__all__ = ["PipelineWeights", "FrozenPointEncoder", "get_point_encoder", "MANO_VEC_DIM"]

log = logging.getLogger(__name__)

MANO_VEC_DIM = 58  # theta 45 + beta 10 + phi 3
ENC_IN_DIM = MANO_VEC_DIM + 1  # plus side flag
MAX_TOKENS = 8  # two samples x two roles x two hands


class PipelineWeights:
    """Named parameter registry for the tokenizer + refinement transformer."""

    def __init__(self, cfg, rng: np.random.Generator | None = None):
        self.d_model = int(cfg.d_model)
        self.n_layers = int(cfg.n_layers)
        self.n_heads = int(cfg.n_heads)
        self.mlp_ratio = int(cfg.mlp_ratio)
        self.feat_dim = int(cfg.feat_dim)
        self.text_dim = int(cfg.text_dim)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        rng = rng if rng is not None else derive_rng(cfg.seed, "weights")
        self.params: dict[str, T.Tensor] = {}
        d = self.d_model
        self._linear(rng, "enc", ENC_IN_DIM, d, d)
        self._linear(rng, "img", self.feat_dim, d, d)
        self._linear(rng, "txt", self.text_dim, d, d)
        for name in ("wq", "wk", "wv"):
            self._param(f"fuse.{name}", self._init(rng, (d, d)))
            self._param(f"fuse.b{name[1]}", np.zeros(d))
        self._param("fuse.wo", self._init(rng, (d, d)))
        hidden = d * self.mlp_ratio
        for i in range(self.n_layers):
            p = f"layers.{i}"
            self._param(f"{p}.ln1.g", np.ones(d))
            self._param(f"{p}.ln1.b", np.zeros(d))
            for name in ("wq", "wk", "wv", "wo"):
                self._param(f"{p}.attn.{name}", self._init(rng, (d, d)))
                self._param(f"{p}.attn.b{name[1]}", np.zeros(d))
            self._param(f"{p}.ln2.g", np.ones(d))
            self._param(f"{p}.ln2.b", np.zeros(d))
            self._param(f"{p}.mlp.w1", self._init(rng, (d, hidden)))
            self._param(f"{p}.mlp.b1", np.zeros(hidden))
            self._param(f"{p}.mlp.w2", self._init(rng, (hidden, d)))
            self._param(f"{p}.mlp.b2", np.zeros(d))
        self._param("final_ln.g", np.ones(d))
        self._param("final_ln.b", np.zeros(d))
        self._param("dec.w1", self._init(rng, (d, d)))
        self._param("dec.b1", np.zeros(d))
        self._param("dec.w2", np.zeros((d, MANO_VEC_DIM)))  # zero start: delta = 0
        self._param("dec.b2", np.zeros(MANO_VEC_DIM))
        # embeddings start large enough that attention can route by
        # role/position/side from the first step
        self._param("mask_emb", 0.3 * rng.standard_normal(d))
        self._param("role_emb", 0.3 * rng.standard_normal((4, d)))
        self._param("pos_emb", 0.3 * rng.standard_normal((MAX_TOKENS, d)))
        self._param("hand_emb", 0.3 * rng.standard_normal((2, d)))
        self.param_count = sum(p.data.size for p in self.params.values())
        log.info("pipeline built: %d parameters in %d tensors", self.param_count, len(self.params))

    @staticmethod
    def _init(rng, shape):
        return rng.standard_normal(shape) / np.sqrt(shape[0])

    def _linear(self, rng, prefix, n_in, hidden, n_out):
        self._param(f"{prefix}.w1", self._init(rng, (n_in, hidden)))
        self._param(f"{prefix}.b1", np.zeros(hidden))
        self._param(f"{prefix}.w2", self._init(rng, (hidden, n_out)))
        self._param(f"{prefix}.b2", np.zeros(n_out))

    def _param(self, name, value):
        self.params[name] = T.Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)

    def __getitem__(self, name: str) -> T.Tensor:
        return self.params[name]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self.params) - set(arrays))
        extra = sorted(set(arrays) - set(self.params))
        if missing or extra:
            raise ValueError(f"weight name mismatch: missing {missing[:4]}, extra {extra[:4]}")
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"weight {name!r}: manifest shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()
            p.grad = None


class FrozenPointEncoder:
    """Fixed-seed permutation-invariant point embedding (centered input).

    Per-point projection + tanh, max-pool over points, then a small MLP on
    the pooled vector. Weights never change; the 3D perceptual loss
    differentiates through the points only, via a fused pooling kernel
    (numba or numpy backend) so the (N x hidden) activations never sit on
    the tape.
    """

    SEED = 1306
    POOLED = 24
    HIDDEN = 32
    OUT = 16
    SCALE = 0.01  # millimeters to O(1)

    def __init__(self) -> None:
        rng = derive_rng(self.SEED, "frozen-point-encoder")
        init = PipelineWeights._init
        self.w1 = np.ascontiguousarray(init(rng, (3, self.POOLED)))
        self.b1 = np.ascontiguousarray(0.1 * rng.standard_normal(self.POOLED))
        self.w2 = T.Tensor(init(rng, (self.POOLED, self.HIDDEN)))
        self.b2 = T.Tensor(0.1 * rng.standard_normal(self.HIDDEN))
        self.w3 = T.Tensor(init(rng, (self.HIDDEN, self.OUT)))
        self.parameters = (self.w1, self.b1, self.w2.data, self.b2.data, self.w3.data)

    def _pooled(self, points: T.Tensor) -> T.Tensor:
        pts = np.ascontiguousarray(points.data)
        m, n, _ = pts.shape
        y, idx = kernels.phi_pool(pts, self.w1, self.b1, self.SCALE)

        def bw(g):
            gp = kernels.phi_pool_backward(g, y, idx, self.w1, self.SCALE, n)
            T.accumulate_grad(points, gp, own=True)

        return T.custom_op(y, [points], bw)

    def encode(self, points: T.Tensor) -> T.Tensor:
        """points (B, N, 3) -> embeddings (B, OUT)."""
        pooled = self._pooled(points)
        h = T.tanh(T.add(T.matmul(pooled, self.w2), self.b2))
        return T.matmul(h, self.w3)


_POINT_ENCODER: FrozenPointEncoder | None = None


def get_point_encoder() -> FrozenPointEncoder:
    global _POINT_ENCODER
    if _POINT_ENCODER is None:
        _POINT_ENCODER = FrozenPointEncoder()
    return _POINT_ENCODER
