"""Client-facing retrieval ops: classify, describe, pick one template."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .client import ClassificationFailureError, MalformedReplyError, parse_involvement_reply
from .client import DescriptorFailureError
from .embed import embed_text
from .involvement import InvolvementClass
from .templates import TemplateDb, TemplateRecord

__all__ = ["ClassifyResult", "classify_involvement", "describe", "retrieve_template"]

log = logging.getLogger(__name__)


@dataclass
class ClassifyResult:
    value: InvolvementClass
    raw_replies: list[str]  # retained for audit, malformed attempts included


def classify_involvement(image_ref, client, prompts, retries: int = 2) -> ClassifyResult:
    """Ask for the involvement label; malformed replies are retried."""
    raw = []
    for _ in range(retries + 1):
        reply = client.complete(prompts["classify_system"], prompts["classify_user"], image_ref)
        raw.append(reply)
        try:
            return ClassifyResult(parse_involvement_reply(reply), raw)
        except MalformedReplyError:
            continue
    raise ClassificationFailureError(
        f"no parseable involvement label for {image_ref!r} after {retries + 1} attempts: {raw}"
    )


def describe(image_ref, prompt_style: str, client, prompts) -> str:
    """One-sentence description under the chosen prompt style."""
    if prompt_style not in ("description", "reasoning"):
        raise ValueError(f"prompt_style must be 'description' or 'reasoning', got {prompt_style!r}")
    reply = client.complete(
        prompts[f"{prompt_style}_system"], prompts[f"{prompt_style}_user"], image_ref
    )
    if not reply or not reply.strip():
        raise DescriptorFailureError(f"empty description for {image_ref!r}")
    return reply


def retrieve_template(
    query_image_ref,
    db: TemplateDb,
    strategy: str,
    client,
    prompts,
    rng: np.random.Generator | None = None,
    prompt_style: str = "description",
    exclude_id: str | None = None,
) -> TemplateRecord:
    """Return exactly one validated template for the query.

    visual   -> seeded uniform pick within the query's involvement class
    textual  -> cosine argmax over description embeddings
    combined -> cosine argmax within the involvement class

    The query itself is excluded when present in the db. An empty class
    bucket falls back to the global argmax with a logged warning.
    """
    if strategy not in ("visual", "textual", "combined"):
        raise ValueError(f"unknown retrieval strategy {strategy!r}")
    pool = [r for r in db.validated_records() if r.record_id != exclude_id]
    if not pool:
        raise ValueError("template database has no validated records to retrieve from")

    if strategy == "visual":
        cls = classify_involvement(query_image_ref, client, prompts).value
        bucket = [r for r in pool if r.involvement == cls]
        if not bucket:
            log.warning(
                "empty class-%d bucket for %r; falling back to global textual argmax",
                int(cls),
                query_image_ref,
            )
            return _textual_argmax(query_image_ref, pool, client, prompts, prompt_style)
        if rng is None:
            raise ValueError("visual retrieval needs a seeded rng")
        return bucket[int(rng.integers(len(bucket)))]

    if strategy == "textual":
        return _textual_argmax(query_image_ref, pool, client, prompts, prompt_style)

    cls = classify_involvement(query_image_ref, client, prompts).value
    bucket = [r for r in pool if r.involvement == cls]
    if not bucket:
        log.warning(
            "empty class-%d bucket for %r; falling back to global textual argmax",
            int(cls),
            query_image_ref,
        )
        bucket = pool
    return _textual_argmax(query_image_ref, bucket, client, prompts, prompt_style)


def _textual_argmax(query_image_ref, pool, client, prompts, prompt_style) -> TemplateRecord:
    text = describe(query_image_ref, prompt_style, client, prompts)
    q = embed_text(text)
    sims = np.array([float(q @ r.text_embedding) for r in pool])
    return pool[int(np.argmax(sims))]
