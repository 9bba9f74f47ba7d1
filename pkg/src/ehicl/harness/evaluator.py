"""Split evaluation: refined vs coarse metrics, per-type breakdown, histogram.

Refinement runs in inference mode (query target fully masked), retrieval
draws templates from the training pool only, and the coarse column is the
no-refinement baseline. Detection flags gate aggregation exactly as in the
metrics module; samples without hands are counted but carry no metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..hand import HandRig, forward
from ..icl.transformer import export_attention
from ..icl.weights import PipelineWeights
from ..metrics import HandEval, SampleEval, aggregate, hand_eval, mrrpe
from ..retrieval.analysis import bin_similarity_gain
from ..retrieval.embed import cosine_similarity, embed_text
from ..retrieval.involvement import InvolvementClass
from .config import RunConfig
from .infer import pick_template, query_text, refine_sample
from .synth import Corpus

__all__ = ["RunReport", "evaluate"]

_TYPE_NAMES = {0: "left_hand", 1: "right_hand", 2: "two_hands", 3: "non_hand"}


@dataclass
class RunReport:
    split: str
    config: dict
    counts: dict
    refined: dict
    coarse: dict
    per_type: dict
    retrieval_histogram: list
    curves: list = field(default_factory=list)
    attention_exports: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "split": self.split,
            "config": self.config,
            "counts": self.counts,
            "refined": self.refined,
            "coarse": self.coarse,
            "per_type": self.per_type,
            "retrieval_histogram": self.retrieval_histogram,
            "curves": self.curves,
            "attention_exports": self.attention_exports,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"


def _geom_pair(rig, params_by_side, side):
    geom = forward(rig, params_by_side[side])
    return geom.vertices, geom.joints


def evaluate(
    weights: PipelineWeights,
    cfg: RunConfig,
    corpus: Corpus,
    db,
    client,
    prompts,
    rig: HandRig,
    split: str = "test",
    curves: list | None = None,
    attention_samples: int = 0,
) -> RunReport:
    samples = corpus.split(split)
    refined_evals: list[SampleEval] = []
    coarse_evals: list[SampleEval] = []
    sims: list[float] = []
    gains: list[float] = []
    by_type_refined: dict[int, list[SampleEval]] = {k: [] for k in range(4)}
    by_type_coarse: dict[int, list[SampleEval]] = {k: [] for k in range(4)}
    type_counts = {k: 0 for k in range(4)}
    attention_exports = []
    n_refined = 0

    for sample in samples:
        cls = int(sample.involvement)
        type_counts[cls] += 1
        if not sample.sides:
            continue
        template = pick_template(sample, db, cfg, client, prompts)
        text = query_text(sample, cfg, client, prompts)
        retain = len(attention_exports) < attention_samples
        result = refine_sample(sample, template, text, weights, retain_attention=retain)
        if retain:
            attention_exports.append(export_attention(result, weights))
        n_refined += 1

        ref_hands: dict[str, HandEval] = {}
        coa_hands: dict[str, HandEval] = {}
        ref_roots, coa_roots, gt_roots = {}, {}, {}
        gain_parts = []
        for side in sample.sides:
            gt_v, gt_j = _geom_pair(rig, sample.gt, side)
            rf_v, rf_j = _geom_pair(rig, result.params, side)
            co_v, co_j = _geom_pair(rig, sample.coarse, side)
            detected = bool(sample.detected.get(side, False))
            ref_hands[side] = hand_eval(rf_v, rf_j, gt_v, gt_j, cfg.f_thresholds, detected)
            coa_hands[side] = hand_eval(co_v, co_j, gt_v, gt_j, cfg.f_thresholds, detected)
            ref_roots[side], coa_roots[side], gt_roots[side] = rf_j[0], co_j[0], gt_j[0]
            if detected:
                gain_parts.append(coa_hands[side].p_mpvpe - ref_hands[side].p_mpvpe)

        ref_mrrpe = coa_mrrpe = None
        if set(sample.sides) == {"left", "right"} and all(sample.detected.values()):
            ref_mrrpe = mrrpe(ref_roots["left"], ref_roots["right"], gt_roots["left"], gt_roots["right"])
            coa_mrrpe = mrrpe(coa_roots["left"], coa_roots["right"], gt_roots["left"], gt_roots["right"])

        ref_eval = SampleEval(sample.sample_id, ref_hands, ref_mrrpe)
        coa_eval = SampleEval(sample.sample_id, coa_hands, coa_mrrpe)
        refined_evals.append(ref_eval)
        coarse_evals.append(coa_eval)
        by_type_refined[cls].append(ref_eval)
        by_type_coarse[cls].append(coa_eval)
        if gain_parts:
            sims.append(cosine_similarity(embed_text(sample.description), template.text_embedding))
            gains.append(float(np.mean(gain_parts)))

    per_type = {}
    for cls in range(4):
        entry = {"count": type_counts[cls]}
        rep_r = aggregate(by_type_refined[cls], "general")
        rep_c = aggregate(by_type_coarse[cls], "general")
        entry["refined"] = rep_r.means if not rep_r.empty else None
        entry["coarse"] = rep_c.means if not rep_c.empty else None
        entry["n_hands"] = rep_r.n_hands
        per_type[_TYPE_NAMES[cls]] = entry

    report = RunReport(
        split=split,
        config={
            "seed": cfg.seed,
            "rig_seed": cfg.rig_seed,
            "mask_ratio": cfg.mask_ratio,
            "epochs": cfg.epochs,
            "retrieval_strategy": cfg.retrieval_strategy,
            "prompt_style": cfg.prompt_style,
            "dataset_mode": cfg.dataset_mode,
            "lambdas": cfg.lambdas,
        },
        counts={
            "n_queries": len(samples),
            "n_refined": n_refined,
            "n_no_hand_queries": type_counts[3],
            "empty_split": len(samples) == 0,
        },
        refined={
            "general": aggregate(refined_evals, "general").as_dict(),
            "bimanual": aggregate(refined_evals, "bimanual").as_dict(),
        },
        coarse={
            "general": aggregate(coarse_evals, "general").as_dict(),
            "bimanual": aggregate(coarse_evals, "bimanual").as_dict(),
        },
        per_type=per_type,
        retrieval_histogram=bin_similarity_gain(sims, gains) if sims else [],
        curves=list(curves or []),
        attention_exports=attention_exports,
    )
    return report
