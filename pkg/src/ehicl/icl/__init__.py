"""Multimodal ICL tokenizer, masked refinement transformer, and losses."""

from .weights import PipelineWeights, FrozenPointEncoder, get_point_encoder
from .tokenizer import (
    ROLES,
    TokenBundle,
    TokenSet,
    apply_mask,
    assemble_tokens,
    build_bundle,
    encode_mano,
    fuse,
    mano_input_vector,
    mask_count,
)
from .transformer import (
    AttentionRetentionError,
    RefineResult,
    decode_deltas,
    encoder_forward,
    export_attention,
    reconstruct_targets,
    refine,
)
from .losses import (
    LossBreakdown,
    loss_3d,
    loss_joints,
    loss_mano,
    loss_vertices,
    phi_encode,
    total_loss,
)

__all__ = [
    "PipelineWeights",
    "FrozenPointEncoder",
    "get_point_encoder",
    "ROLES",
    "TokenSet",
    "TokenBundle",
    "build_bundle",
    "apply_mask",
    "assemble_tokens",
    "encode_mano",
    "fuse",
    "mano_input_vector",
    "mask_count",
    "encoder_forward",
    "decode_deltas",
    "refine",
    "reconstruct_targets",
    "export_attention",
    "RefineResult",
    "AttentionRetentionError",
    "LossBreakdown",
    "loss_mano",
    "loss_vertices",
    "loss_joints",
    "phi_encode",
    "loss_3d",
    "total_loss",
]
