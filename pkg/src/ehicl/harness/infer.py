"""Shared per-sample inference path used by validation loops and evaluation."""

from __future__ import annotations

import numpy as np

from ..hand import HandRig, forward
from ..icl.tokenizer import build_bundle
from ..icl.transformer import RefineResult, refine
from ..icl.weights import PipelineWeights
from ..metrics import mpvpe
from ..retrieval.retrieve import describe, retrieve_template
from ..rng import derive_rng
from .config import RunConfig
from .synth import SyntheticSample

__all__ = ["pick_template", "query_text", "refine_sample", "val_p_mpvpe"]


def pick_template(sample, db, cfg: RunConfig, client, prompts):
    """Template choice for a query; the stream depends on (seed, sample) only."""
    rng = derive_rng(cfg.seed, "retrieve", sample.sample_id)
    return retrieve_template(
        sample.image_ref,
        db,
        cfg.retrieval_strategy,
        client,
        prompts,
        rng=rng,
        prompt_style=cfg.prompt_style,
        exclude_id=sample.sample_id,
    )


def query_text(sample, cfg: RunConfig, client, prompts) -> str:
    return describe(sample.image_ref, cfg.prompt_style, client, prompts)


def refine_sample(
    sample: SyntheticSample,
    template,
    text: str,
    weights: PipelineWeights,
    retain_attention: bool = False,
) -> RefineResult:
    """Inference-mode refinement; query ground truth is never consulted."""
    bundle = build_bundle(
        template,
        sample.coarse,
        sample.image_features,
        text,
        weights,
        mode="inference",
        query_id=sample.sample_id,
    )
    return refine(bundle, weights, retain_attention=retain_attention)


def val_p_mpvpe(weights, cfg, corpus, db, client, prompts, rig: HandRig, split: str = "val"):
    """Mean aligned vertex error of refined hands over a split (detected only)."""
    errors = []
    for sample in corpus.split(split):
        if not sample.sides:
            continue
        template = pick_template(sample, db, cfg, client, prompts)
        text = query_text(sample, cfg, client, prompts)
        result = refine_sample(sample, template, text, weights)
        for side in sample.sides:
            if not sample.detected.get(side, False):
                continue
            pred = forward(rig, result.params[side]).vertices
            gt = forward(rig, sample.gt[side]).vertices
            errors.append(mpvpe(pred, gt, aligned=True))
    return float(np.mean(errors)) if errors else float("nan")
