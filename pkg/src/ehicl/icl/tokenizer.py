"""ICL tokenizer: parameter encoding, cross-attention fusion, masking.

A bundle holds four token sets in fixed order (template_input,
template_target, query_input, query_target), one token per hand per set.
Structural tokens are fused with their own sample's image+text context via
cross-attention (queries = structural tokens, keys/values = context), then
role/position/hand embeddings are added at assembly. Masking replaces a
token's content with the learned mask embedding while keeping the
role/position/hand embeddings, so the transformer still knows which slot it
is reconstructing.

Target-token masking pools template and query target tokens; the count is
round-half-up of ratio times the pooled token count. Input sets are never
masked. In inference mode the query target is built from a zero parameter
vector and fully masked, so no query ground truth can influence the output.

All core functions take a leading batch axis; the per-sample ops wrap B=1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..hand.params import PARAM_VECTOR_DIM, HandParams
from ..retrieval.embed import embed_text
from .weights import ENC_IN_DIM, PipelineWeights

__all__ = [
    "ROLES",
    "TokenSet",
    "TokenBundle",
    "mano_input_vector",
    "encode_mano",
    "fuse",
    "build_bundle",
    "apply_mask",
    "assemble_tokens",
    "mask_count",
    "encode_mano_batch",
    "context_tokens_batch",
    "fuse_batch",
    "embedding_rows",
]

ROLES = ("template_input", "template_target", "query_input", "query_target")
_SIDE_FLAG = {"right": 1.0, "left": -1.0}
_SIDE_ID = {"left": 0, "right": 1}


def mano_input_vector(params: HandParams | None, side: str) -> np.ndarray:
    """Flatten (theta, beta, phi, side flag); None gives the zero placeholder."""
    vec = np.zeros(ENC_IN_DIM)
    if params is not None:
        vec[:PARAM_VECTOR_DIM] = params.to_vector()
    vec[PARAM_VECTOR_DIM] = _SIDE_FLAG[side]
    return vec


def _mlp2(x, w, prefix):
    h = T.tanh(T.add(T.matmul(x, w[f"{prefix}.w1"]), w[f"{prefix}.b1"]))
    return T.add(T.matmul(h, w[f"{prefix}.w2"]), w[f"{prefix}.b2"])


def encode_mano_batch(vectors, weights: PipelineWeights):
    """(B, n, 59) parameter vectors -> (B, n, d) structural tokens."""
    x = vectors if isinstance(vectors, T.Tensor) else T.Tensor(vectors)
    return _mlp2(x, weights, "enc")


def context_tokens_batch(image_features, text_embeddings, weights: PipelineWeights):
    """Per-sample modality context: one image token + one text token, (B, 2, d)."""
    feats = image_features if isinstance(image_features, T.Tensor) else T.Tensor(image_features)
    texts = text_embeddings if isinstance(text_embeddings, T.Tensor) else T.Tensor(text_embeddings)
    b = feats.shape[0]
    d = weights.d_model
    img = T.reshape(_mlp2(feats, weights, "img"), (b, 1, d))
    txt = T.reshape(_mlp2(texts, weights, "txt"), (b, 1, d))
    return T.concat([img, txt], axis=1)


def _split_heads(x, b, n, heads, dh):
    return T.swapaxes(T.reshape(x, (b, n, heads, dh)), 1, 2)


def fuse_batch(structural, context, weights: PipelineWeights, retain: bool = False):
    """Structural tokens attend over context tokens; residual connection.

    structural (B, n, d), context (B, m, d) -> fused (B, n, d) and the
    per-head attention (B, H, n, m), returned as data for export.
    """
    b, n, d = structural.shape
    m = context.shape[1]
    heads = weights.n_heads
    dh = d // heads
    q = T.add(T.matmul(structural, weights["fuse.wq"]), weights["fuse.bq"])
    k = T.add(T.matmul(context, weights["fuse.wk"]), weights["fuse.bk"])
    v = T.add(T.matmul(context, weights["fuse.wv"]), weights["fuse.bv"])
    qh = _split_heads(q, b, n, heads, dh)
    kh = _split_heads(k, b, m, heads, dh)
    vh = _split_heads(v, b, m, heads, dh)
    scores = T.mul(T.matmul(qh, T.swapaxes(kh, 2, 3)), 1.0 / math.sqrt(dh))
    att = T.softmax(scores)  # (B, H, n, m)
    ctx = T.reshape(T.swapaxes(T.matmul(att, vh), 1, 2), (b, n, d))
    fused = T.add(structural, T.matmul(ctx, weights["fuse.wo"]))
    return fused, (att.data.copy() if retain else None)


def embedding_rows(role_ids, pos_ids, hand_ids, weights: PipelineWeights):
    """(T, d) role+position+hand embedding sum for a bundle layout."""
    rows = T.add(
        T.gather(weights["role_emb"], np.asarray(role_ids, dtype=np.int64)),
        T.gather(weights["pos_emb"], np.asarray(pos_ids, dtype=np.int64)),
    )
    return T.add(rows, T.gather(weights["hand_emb"], np.asarray(hand_ids, dtype=np.int64)))


def assemble_tokens(content, mask: np.ndarray, emb_rows, weights: PipelineWeights):
    """Apply mask replacement and add embeddings: (B, T, d) ready for the encoder."""
    b, t, d = content.shape
    m = np.asarray(mask, dtype=np.float64).reshape(b, t, 1)
    keep = T.mul(content, T.Tensor(1.0 - m))
    masked = T.mul(T.reshape(weights["mask_emb"], (1, 1, d)), T.Tensor(m))
    return T.add(T.add(keep, masked), T.reshape(emb_rows, (1, t, d)))


def mask_count(ratio: float, n_target: int) -> int:
    """Round-half-up of ratio * n_target."""
    return int(math.floor(ratio * n_target + 0.5))


# ------------------------------------------------------------- bundle types


@dataclass
class TokenSet:
    """One role's tokens: (n, d) content (post-fusion) plus mask flags."""

    role: str
    tokens: T.Tensor
    sides: tuple[str, ...]
    mask: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.role.endswith("input") and self.mask.any():
            raise ValueError(f"input role {self.role} must never be masked")


@dataclass
class TokenBundle:
    """The four token sets in fixed order plus provenance and residual bases."""

    sets: list[TokenSet]
    template_id: str
    query_id: str
    mode: str  # "train" | "inference"
    template_coarse: np.ndarray  # (n_t, 58) residual bases
    query_coarse: np.ndarray  # (n_q, 58)
    fusion_attention: dict = field(default_factory=dict)

    def __post_init__(self):
        if tuple(s.role for s in self.sets) != ROLES:
            raise ValueError("bundle sets must follow the canonical role order")

    @property
    def template_sides(self) -> tuple[str, ...]:
        return self.sets[0].sides

    @property
    def query_sides(self) -> tuple[str, ...]:
        return self.sets[2].sides

    @property
    def n_tokens(self) -> int:
        return sum(s.tokens.shape[0] for s in self.sets)

    def layout(self):
        """role_ids, pos_ids, hand_ids, and role label per token position."""
        role_ids, hand_ids, labels = [], [], []
        for ri, s in enumerate(self.sets):
            for side in s.sides:
                role_ids.append(ri)
                hand_ids.append(_SIDE_ID[side])
                labels.append(s.role)
        pos_ids = list(range(len(role_ids)))
        return role_ids, pos_ids, hand_ids, labels

    def target_slots(self):
        """(position, role, side, slot index within its set) for target tokens."""
        out = []
        pos = 0
        for s in self.sets:
            for i, side in enumerate(s.sides):
                if s.role.endswith("target"):
                    out.append((pos, s.role, side, i))
                pos += 1
        return out

    def full_mask(self) -> np.ndarray:
        return np.concatenate([s.mask for s in self.sets])

    def content_matrix(self) -> T.Tensor:
        return T.concat([s.tokens for s in self.sets], axis=0)


def encode_mano(params: HandParams | None, side: str, weights: PipelineWeights) -> T.Tensor:
    """One structural token (d,) for one hand."""
    vec = mano_input_vector(params, side).reshape(1, 1, ENC_IN_DIM)
    return T.reshape(encode_mano_batch(vec, weights), (weights.d_model,))


def fuse(structural, image_tokens, text_tokens, weights: PipelineWeights, retain: bool = False):
    """Per-sample fusion: (n, d) structural with (mi, d)+(mt, d) context rows."""
    s = structural if isinstance(structural, T.Tensor) else T.Tensor(structural)
    parts = []
    for name, tok in (("image", image_tokens), ("text", text_tokens)):
        tok = tok if isinstance(tok, T.Tensor) else T.Tensor(tok)
        if tok.ndim != 2 or tok.shape[1] != s.shape[1]:
            raise T.ShapeMismatchError(
                f"fuse: {name} tokens {tok.shape} do not match structural width {s.shape}"
            )
        parts.append(tok)
    n, d = s.shape
    ctx = T.concat(parts, axis=0)
    fused, att = fuse_batch(
        T.reshape(s, (1, n, d)), T.reshape(ctx, (1, ctx.shape[0], d)), weights, retain=True
    )
    return T.reshape(fused, (n, d)), att[0]


def _sample_role_tokens(params_by_side, sides, weights):
    vecs = np.stack([mano_input_vector(params_by_side.get(side), side) for side in sides])
    return vecs.reshape(1, len(sides), ENC_IN_DIM)


def build_bundle(
    template,
    query_coarse: dict[str, HandParams],
    query_features: np.ndarray,
    query_text: str,
    weights: PipelineWeights,
    mode: str = "inference",
    query_gt: dict[str, HandParams] | None = None,
    query_id: str = "query",
) -> TokenBundle:
    """Tokenize one template/query pair.

    `template` needs gt/coarse parameter dicts, image_features, description
    and record_id (TemplateRecord satisfies this). In training mode the query
    ground truth is required and feeds the query-target tokens; in inference
    those tokens start from the zero placeholder and are fully masked.
    """
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    t_sides = tuple(sorted(template.gt.keys()))
    q_sides = tuple(sorted(query_coarse.keys()))
    if not t_sides or not q_sides:
        raise ValueError("bundle needs at least one hand on each side of the pair")
    if mode == "train" and (query_gt is None or set(query_gt) != set(q_sides)):
        raise ValueError("training mode requires query ground truth for every hand")

    d = weights.d_model
    tpl_ctx = context_tokens_batch(
        template.image_features.reshape(1, -1),
        embed_text(template.description).reshape(1, -1),
        weights,
    )
    qry_ctx = context_tokens_batch(
        query_features.reshape(1, -1), embed_text(query_text).reshape(1, -1), weights
    )

    role_inputs = [
        ("template_input", template.coarse, t_sides, tpl_ctx),
        ("template_target", template.gt, t_sides, tpl_ctx),
        ("query_input", query_coarse, q_sides, qry_ctx),
        (
            "query_target",
            (query_gt if mode == "train" else {side: None for side in q_sides}),
            q_sides,
            qry_ctx,
        ),
    ]
    sets = []
    fusion_att = {}
    for role, params_by_side, sides, ctx in role_inputs:
        tokens = encode_mano_batch(_sample_role_tokens(params_by_side, sides, weights), weights)
        fused, att = fuse_batch(tokens, ctx, weights, retain=True)
        fusion_att[role] = att[0]
        mask = np.zeros(len(sides), dtype=bool)
        if role == "query_target" and mode == "inference":
            mask[:] = True  # the query target is unavailable at inference
        sets.append(TokenSet(role, T.reshape(fused, (len(sides), d)), sides, mask))

    return TokenBundle(
        sets=sets,
        template_id=getattr(template, "record_id", "template"),
        query_id=query_id,
        mode=mode,
        template_coarse=np.stack([template.coarse[s].to_vector() for s in t_sides]),
        query_coarse=np.stack([query_coarse[s].to_vector() for s in q_sides]),
        fusion_attention=fusion_att,
    )


def apply_mask(bundle: TokenBundle, ratio: float, rng: np.random.Generator) -> TokenBundle:
    """Mask round-half-up(ratio * n) of the pooled target tokens, in place."""
    if bundle.mode != "train":
        raise ValueError("apply_mask is a training-mode operation")
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    tpl_tar, qry_tar = bundle.sets[1], bundle.sets[3]
    n_t, n_q = len(tpl_tar.sides), len(qry_tar.sides)
    pooled = n_t + n_q
    count = mask_count(ratio, pooled)
    chosen = rng.permutation(pooled)[:count]
    tpl_tar.mask = np.zeros(n_t, dtype=bool)
    qry_tar.mask = np.zeros(n_q, dtype=bool)
    for idx in chosen:
        if idx < n_t:
            tpl_tar.mask[idx] = True
        else:
            qry_tar.mask[idx - n_t] = True
    return bundle
