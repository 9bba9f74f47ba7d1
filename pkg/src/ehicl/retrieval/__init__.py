"""Exemplar retrieval: involvement classes, descriptions, template lookup."""

from .client import (
    ClassificationFailureError,
    DescriptorFailureError,
    HttpVlmClient,
    MalformedReplyError,
    MockVlmClient,
    VlmRequest,
    VlmResponse,
    VlmTransportError,
    parse_involvement_reply,
)
from .descriptions import description_sentence, reasoning_sentence
from .embed import cosine_similarity, embed_text
from .involvement import InvolvementClass
from .prompts import load_prompts
from .retrieve import ClassifyResult, classify_involvement, describe, retrieve_template
from .templates import TemplateDb, TemplateRecord, load_db, save_db
from .validate import ValidationInterrupted, ValidationState, apply_validation, validate_templates
from .analysis import bin_similarity_gain

__all__ = [
    "InvolvementClass",
    "TemplateRecord",
    "TemplateDb",
    "save_db",
    "load_db",
    "VlmRequest",
    "VlmResponse",
    "HttpVlmClient",
    "MockVlmClient",
    "VlmTransportError",
    "MalformedReplyError",
    "ClassificationFailureError",
    "DescriptorFailureError",
    "parse_involvement_reply",
    "load_prompts",
    "embed_text",
    "cosine_similarity",
    "classify_involvement",
    "describe",
    "retrieve_template",
    "ClassifyResult",
    "validate_templates",
    "apply_validation",
    "ValidationState",
    "ValidationInterrupted",
    "description_sentence",
    "reasoning_sentence",
    "bin_similarity_gain",
]
