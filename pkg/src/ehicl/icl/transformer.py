"""Refinement transformer: pre-norm self-attention encoder plus MANO decoder.

The encoder runs full self-attention over the assembled bundle. Decoding
reads the tokens at target positions through a two-layer MLP whose output is
a residual added to the slot's coarse parameter vector; axis-angle blocks are
wrapped into range only when materializing HandParams, so training gradients
flow through the raw values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..hand.params import HandParams
from .tokenizer import TokenBundle, assemble_tokens, embedding_rows
from .weights import PipelineWeights

__all__ = [
    "encoder_forward",
    "decode_deltas",
    "refine",
    "reconstruct_targets",
    "export_attention",
    "RefineResult",
    "AttentionRetentionError",
]


class AttentionRetentionError(RuntimeError):
    """Attention export requested but the forward pass did not retain it."""


def _ln_affine(x, weights, prefix):
    return T.add(T.mul(T.layer_norm(x), weights[f"{prefix}.g"]), weights[f"{prefix}.b"])


def encoder_forward(x, weights: PipelineWeights, retain: bool = False):
    """(B, T, d) -> (B, T, d); optionally retains per-layer attention maps."""
    b, t, d = x.shape
    heads = weights.n_heads
    dh = d // heads
    attentions = [] if retain else None
    for i in range(weights.n_layers):
        p = f"layers.{i}"
        h = _ln_affine(x, weights, f"{p}.ln1")
        q = T.add(T.matmul(h, weights[f"{p}.attn.wq"]), weights[f"{p}.attn.bq"])
        k = T.add(T.matmul(h, weights[f"{p}.attn.wk"]), weights[f"{p}.attn.bk"])
        v = T.add(T.matmul(h, weights[f"{p}.attn.wv"]), weights[f"{p}.attn.bv"])
        qh = T.swapaxes(T.reshape(q, (b, t, heads, dh)), 1, 2)
        kh = T.swapaxes(T.reshape(k, (b, t, heads, dh)), 1, 2)
        vh = T.swapaxes(T.reshape(v, (b, t, heads, dh)), 1, 2)
        att = T.softmax(T.mul(T.matmul(qh, T.swapaxes(kh, 2, 3)), 1.0 / math.sqrt(dh)))
        if retain:
            attentions.append(att.data.copy())  # (B, H, T, T)
        ctx = T.reshape(T.swapaxes(T.matmul(att, vh), 1, 2), (b, t, d))
        x = T.add(x, T.add(T.matmul(ctx, weights[f"{p}.attn.wo"]), weights[f"{p}.attn.bo"]))
        h2 = _ln_affine(x, weights, f"{p}.ln2")
        m = T.tanh(T.add(T.matmul(h2, weights[f"{p}.mlp.w1"]), weights[f"{p}.mlp.b1"]))
        x = T.add(x, T.add(T.matmul(m, weights[f"{p}.mlp.w2"]), weights[f"{p}.mlp.b2"]))
    return _ln_affine(x, weights, "final_ln"), attentions


def decode_deltas(tokens, weights: PipelineWeights):
    """(..., d) refined tokens -> (..., 58) parameter residuals."""
    h = T.tanh(T.add(T.matmul(tokens, weights["dec.w1"]), weights["dec.b1"]))
    return T.add(T.matmul(h, weights["dec.w2"]), weights["dec.b2"])


@dataclass
class RefineResult:
    params: dict[str, HandParams]  # refined query parameters per side
    raw_vectors: dict[str, T.Tensor]  # pre-wrap 58-vectors (differentiable)
    attentions: list | None  # per-layer (1, H, T, T) when retained
    bundle: TokenBundle


def _bundle_forward(bundle: TokenBundle, weights: PipelineWeights, retain: bool):
    role_ids, pos_ids, hand_ids, _ = bundle.layout()
    emb = embedding_rows(role_ids, pos_ids, hand_ids, weights)
    content = bundle.content_matrix()
    t, d = content.shape
    x = assemble_tokens(T.reshape(content, (1, t, d)), bundle.full_mask().reshape(1, t), emb, weights)
    return encoder_forward(x, weights, retain=retain)


def refine(bundle: TokenBundle, weights: PipelineWeights, retain_attention: bool = False) -> RefineResult:
    """Decode refined query parameters from a bundle.

    In inference bundles the query-target tokens are fully masked, so the
    output is driven purely by the exemplar pair and the query inputs.
    """
    out, attentions = _bundle_forward(bundle, weights, retain_attention)
    n_t = len(bundle.template_sides)
    n_q = len(bundle.query_sides)
    start = 2 * n_t + n_q  # query_target block
    params: dict[str, HandParams] = {}
    raw: dict[str, T.Tensor] = {}
    for i, side in enumerate(bundle.query_sides):
        token = out[0, start + i, :]
        vec = T.add(decode_deltas(token, weights), T.Tensor(bundle.query_coarse[i]))
        raw[side] = vec
        params[side] = HandParams.from_vector(vec.data.copy(), side)  # wraps axis-angles
    return RefineResult(params=params, raw_vectors=raw, attentions=attentions, bundle=bundle)


def reconstruct_targets(bundle: TokenBundle, weights: PipelineWeights):
    """Decoded parameter vectors at every masked target slot (training).

    Returns a list of (role, side, vec_tensor) with vec = coarse + delta for
    the slot's own sample.
    """
    if bundle.mode != "train":
        raise ValueError("reconstruct_targets expects a training bundle")
    out, _ = _bundle_forward(bundle, weights, retain=False)
    results = []
    for pos, role, side, slot in bundle.target_slots():
        s = bundle.sets[1] if role == "template_target" else bundle.sets[3]
        if not s.mask[slot]:
            continue
        base = bundle.template_coarse if role == "template_target" else bundle.query_coarse
        vec = T.add(decode_deltas(out[0, pos, :], weights), T.Tensor(base[slot]))
        results.append((role, side, vec))
    return results


def export_attention(result: RefineResult, weights: PipelineWeights) -> dict:
    """Serializable attention matrices with token-role labels.

    One entry per (layer, head); every row of every matrix is a softmax
    distribution over the bundle's tokens.
    """
    if result.attentions is None:
        raise AttentionRetentionError("forward pass ran without attention retention")
    _, _, _, labels = result.bundle.layout()
    matrices = []
    for layer, att in enumerate(result.attentions):
        for head in range(att.shape[1]):
            matrices.append(
                {
                    "layer": layer,
                    "head": head,
                    "matrix": att[0, head].tolist(),
                }
            )
    cross = {
        role: att.tolist() for role, att in result.bundle.fusion_attention.items()
    }
    return {
        "token_roles": labels,
        "template_id": result.bundle.template_id,
        "query_id": result.bundle.query_id,
        "self_attention": matrices,
        "fusion_attention": cross,
        "n_layers": weights.n_layers,
        "n_heads": weights.n_heads,
    }
