"""Training loop: masked reconstruction of target tokens over grouped batches.

Each batch is split into groups with identical (template sides, query sides)
layouts so every group runs as one batched tape graph; the per-sample
tokenizer ops and this grouped path share the same core functions. Template
choice, query description, and mask pattern are drawn from streams keyed by
(seed, sample) alone, so the logged loss curve is invariant to the epoch
shuffle and exactly flat when the learning rate is zero.

The loss covers all masked target tokens (template and query) by default;
masked_loss_scope="query" restricts it to query targets. Reported epoch loss
is the token-weighted mean over the whole epoch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..hand import HandRig, forward
from ..hand.forward import geometry_batch
from ..icl.losses import phi_encode, total_loss
from ..icl.tokenizer import (
    assemble_tokens,
    context_tokens_batch,
    embedding_rows,
    encode_mano_batch,
    fuse_batch,
    mano_input_vector,
    mask_count,
)
from ..icl.transformer import decode_deltas, encoder_forward
from ..icl.weights import ENC_IN_DIM, FrozenPointEncoder, PipelineWeights
from ..optim import AdamW
from ..retrieval.embed import embed_text
from ..rng import derive_rng
from .config import RunConfig
from .errors import DataError, NumericalError
from .infer import pick_template, query_text, val_p_mpvpe

__all__ = ["train", "TrainResult"]

log = logging.getLogger(__name__)

_SIDE_ID = {"left": 0, "right": 1}


@dataclass
class TrainResult:
    weights: PipelineWeights
    config: RunConfig
    curves: list[dict]
    best_epoch: int
    best_val: float
    steps: int
    wall_seconds: float = 0.0
    final_train_loss: float = float("nan")


class _SampleCache:
    """Per-sample template choice, query text embedding, mask permutation."""

    def __init__(self, cfg, corpus, db, client, prompts, rig):
        self.cfg = cfg
        self.db = db
        self.client = client
        self.prompts = prompts
        self.rig = rig
        self.template = {}
        self.text_emb = {}
        self.mask_perm = {}
        self.gt_geometry = {}
        self.gt_phi = {}

    def template_for(self, sample):
        if sample.sample_id not in self.template:
            self.template[sample.sample_id] = pick_template(
                sample, self.db, self.cfg, self.client, self.prompts
            )
        return self.template[sample.sample_id]

    def text_embedding_for(self, sample):
        if sample.sample_id not in self.text_emb:
            text = query_text(sample, self.cfg, self.client, self.prompts)
            self.text_emb[sample.sample_id] = embed_text(text)
        return self.text_emb[sample.sample_id]

    def mask_for(self, sample, n_targets: int) -> np.ndarray:
        key = (sample.sample_id, n_targets)
        if key not in self.mask_perm:
            rng = derive_rng(self.cfg.seed, "mask", sample.sample_id)
            self.mask_perm[key] = rng.permutation(n_targets)
        perm = self.mask_perm[key]
        flags = np.zeros(n_targets, dtype=bool)
        flags[perm[: mask_count(self.cfg.mask_ratio, n_targets)]] = True
        return flags

    def gt_geom(self, sample_like, side):
        key = (sample_like.sample_id if hasattr(sample_like, "sample_id") else sample_like.record_id, side)
        if key not in self.gt_geometry:
            geom = forward(self.rig, sample_like.gt[side])
            self.gt_geometry[key] = geom
            self.gt_phi[key] = phi_encode(geom.vertices).data.copy()
        return self.gt_geometry[key], self.gt_phi[key]


def _group_loss_terms(cfg, cache, rig, weights, group, masks):
    """Per-token loss tensors for one uniform-layout group.

    group: list of (sample, template); masks: (G, n_targets) bool.
    Returns (term name -> (per-token tensor, indicator)) at token granularity.
    """
    t_sides = tuple(sorted(group[0][1].gt.keys()))
    q_sides = tuple(sorted(group[0][0].gt.keys()))
    n_t, n_q = len(t_sides), len(q_sides)
    g = len(group)
    d = weights.d_model

    vecs = np.zeros((g, 2 * n_t + 2 * n_q, ENC_IN_DIM))
    tpl_feats = np.zeros((g, cfg.feat_dim))
    tpl_text = np.zeros((g, cfg.text_dim))
    qry_feats = np.zeros((g, cfg.feat_dim))
    qry_text = np.zeros((g, cfg.text_dim))
    bases = np.zeros((g, n_t + n_q, 58))
    gt_vecs = np.zeros((g, n_t + n_q, 58))
    nv = rig.rest_vertices.shape[0]
    gt_verts = np.zeros((g, n_t + n_q, nv, 3))
    gt_joints = np.zeros((g, n_t + n_q, 21, 3))
    gt_phi = np.zeros((g, n_t + n_q, FrozenPointEncoder.OUT))
    for i, (sample, template) in enumerate(group):
        row = 0
        for side in t_sides:
            vecs[i, row] = mano_input_vector(template.coarse[side], side)
            vecs[i, row + n_t] = mano_input_vector(template.gt[side], side)
            bases[i, row] = template.coarse[side].to_vector()
            gt_vecs[i, row] = template.gt[side].to_vector()
            geom, phi = cache.gt_geom(template, side)
            gt_verts[i, row] = geom.vertices
            gt_joints[i, row] = geom.joints
            gt_phi[i, row] = phi
            row += 1
        row = 2 * n_t
        for k, side in enumerate(q_sides):
            vecs[i, row] = mano_input_vector(sample.coarse[side], side)
            vecs[i, row + n_q] = mano_input_vector(sample.gt[side], side)
            bases[i, n_t + k] = sample.coarse[side].to_vector()
            gt_vecs[i, n_t + k] = sample.gt[side].to_vector()
            geom, phi = cache.gt_geom(sample, side)
            gt_verts[i, n_t + k] = geom.vertices
            gt_joints[i, n_t + k] = geom.joints
            gt_phi[i, n_t + k] = phi
            row += 1
        tpl_feats[i] = template.image_features
        tpl_text[i] = template.text_embedding
        qry_feats[i] = sample.image_features
        qry_text[i] = cache.text_embedding_for(sample)

    tokens = encode_mano_batch(vecs, weights)
    tpl_ctx = context_tokens_batch(tpl_feats, tpl_text, weights)
    qry_ctx = context_tokens_batch(qry_feats, qry_text, weights)
    tpl_fused, _ = fuse_batch(tokens[:, : 2 * n_t, :], tpl_ctx, weights)
    qry_fused, _ = fuse_batch(tokens[:, 2 * n_t :, :], qry_ctx, weights)
    content = T.concat([tpl_fused, qry_fused], axis=1)

    t_total = 2 * (n_t + n_q)
    role_ids = [0] * n_t + [1] * n_t + [2] * n_q + [3] * n_q
    hand_ids = [_SIDE_ID[s] for s in t_sides] * 2 + [_SIDE_ID[s] for s in q_sides] * 2
    emb = embedding_rows(role_ids, list(range(t_total)), hand_ids, weights)

    full_mask = np.zeros((g, t_total), dtype=bool)
    full_mask[:, n_t : 2 * n_t] = masks[:, :n_t]
    full_mask[:, 2 * n_t + n_q :] = masks[:, n_t:]

    x = assemble_tokens(content, full_mask, emb, weights)
    out, _ = encoder_forward(x, weights)
    target_tokens = T.concat([out[:, n_t : 2 * n_t, :], out[:, 2 * n_t + n_q :, :]], axis=1)
    pred = T.add(decode_deltas(target_tokens, weights), T.Tensor(bases))

    m = g * (n_t + n_q)
    pred_m = T.reshape(pred, (m, 58))
    indicator = masks.astype(np.float64).reshape(m)
    if cfg.masked_loss_scope == "query":
        scope = np.zeros((g, n_t + n_q))
        scope[:, n_t:] = 1.0
        indicator = indicator * scope.reshape(m)
    masked_idx = np.flatnonzero(indicator > 0)
    if masked_idx.size == 0:
        return None, 0
    # geometry and losses touch only the masked slots; unmasked targets carry
    # no reconstruction loss, matching the masked-autoencoder objective
    pred_sel = T.gather(pred_m, masked_idx, axis=0)
    ms = masked_idx.size
    sides_all = [s for _ in range(g) for s in (list(t_sides) + list(q_sides))]
    sides_sel = [sides_all[i] for i in masked_idx]

    theta = T.reshape(pred_sel[:, 0:45], (ms, 15, 3))
    beta = pred_sel[:, 45:55]
    phi = pred_sel[:, 55:58]
    verts, joints = geometry_batch(rig, theta, beta, phi, sides_sel)

    diff = T.sub(pred_sel, T.Tensor(gt_vecs.reshape(m, 58)[masked_idx]))
    lm_tok = T.tsum(T.mul(diff, diff), axis=1)
    dv = T.sub(verts, T.Tensor(gt_verts.reshape(m, nv, 3)[masked_idx]))
    lv_tok = T.div(T.tsum(T.absolute(dv), axis=(1, 2)), float(3 * nv))
    emb_pred = phi_encode(verts)
    de = T.sub(emb_pred, T.Tensor(gt_phi.reshape(m, -1)[masked_idx]))
    l3_tok = T.tsum(T.mul(de, de), axis=1)
    terms = {"l_mano": lm_tok, "l_v": lv_tok, "l_3d": l3_tok}
    if cfg.dataset_mode == "joints_only":
        dj = T.sub(joints, T.Tensor(gt_joints.reshape(m, 21, 3)[masked_idx]))
        terms["l_j"] = T.div(T.tsum(T.absolute(dj), axis=(1, 2)), 63.0)
    return terms, int(ms)


def _batch_loss(cfg, cache, rig, weights, batch):
    """Weighted total over all masked target tokens in the batch."""
    groups: dict = {}
    for sample in batch:
        template = cache.template_for(sample)
        key = (tuple(sorted(template.gt.keys())), tuple(sorted(sample.gt.keys())))
        groups.setdefault(key, []).append((sample, template))

    prepared = []
    total_masked = 0.0
    for key in sorted(groups):
        group = groups[key]
        n_tar = len(key[0]) + len(key[1])
        masks = np.stack([cache.mask_for(s, n_tar) for s, _ in group])
        prepared.append((group, masks))
        scope = masks.copy()
        if cfg.masked_loss_scope == "query":
            scope[:, : len(key[0])] = False
        total_masked += float(scope.sum())
    if total_masked == 0.0:
        return None, None

    sums: dict[str, T.Tensor] = {}
    for group, masks in prepared:
        terms, n_masked = _group_loss_terms(cfg, cache, rig, weights, group, masks)
        if terms is None:
            continue
        for name, tok in terms.items():
            part = T.div(T.tsum(tok), total_masked)
            sums[name] = part if name not in sums else T.add(sums[name], part)

    return total_loss(
        cfg.dataset_mode,
        cfg.lambdas,
        l_mano=sums.get("l_mano"),
        l_v=sums.get("l_v"),
        l_3d=sums.get("l_3d"),
        l_j=sums.get("l_j"),
    )


def train(cfg: RunConfig, corpus, db, client, prompts, rig: HandRig) -> TrainResult:
    """Full training run; returns the best-validation weights and loss curves."""
    if not db.validated_records():
        raise DataError("template database has no validated records; run validation first")
    weights = PipelineWeights(cfg, derive_rng(cfg.seed, "weights"))
    opt = AdamW(
        weights.params,
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
    )
    cache = _SampleCache(cfg, corpus, db, client, prompts, rig)
    train_samples = [s for s in corpus.split("train") if s.sides]
    if not train_samples:
        raise DataError("no trainable samples (every sample is hand-free)")

    curves: list[dict] = []
    best_val = float("inf")
    best_epoch = -1
    best_state = weights.state_arrays()
    started = time.time()
    steps = 0
    last_epoch_loss = float("nan")
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(len(train_samples))
        epoch_loss_sum = 0.0
        epoch_token_count = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            batch_ids = order[b0 : b0 + cfg.batch_size]
            batch = [train_samples[i] for i in batch_ids]
            with T.Tape():
                total, breakdown = _batch_loss(cfg, cache, rig, weights, batch)
                if total is None:
                    continue
                if not np.isfinite(total.data):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}"
                    )
                T.backward(total)
            opt.step()
            steps += 1
            # token-weighted epoch mean: invariant to how the shuffle batches
            n_tok = _batch_token_count(cfg, cache, batch)
            epoch_loss_sum += float(total.data) * n_tok
            epoch_token_count += n_tok
        epoch_loss = epoch_loss_sum / max(epoch_token_count, 1.0)
        last_epoch_loss = epoch_loss
        entry = {"epoch": epoch, "train_loss": epoch_loss}
        if cfg.val_interval and (epoch + 1) % cfg.val_interval == 0:
            val = val_p_mpvpe(weights, cfg, corpus, db, client, prompts, rig)
            entry["val_p_mpvpe"] = val
            if np.isfinite(val) and val < best_val:
                best_val = val
                best_epoch = epoch
                best_state = weights.state_arrays()
        curves.append(entry)
        log.info("epoch %d: train %.6f%s", epoch, epoch_loss,
                 f", val P-MPVPE {entry.get('val_p_mpvpe', float('nan')):.3f}" if "val_p_mpvpe" in entry else "")

    if best_epoch >= 0:
        weights.load_state_arrays(best_state)
    return TrainResult(
        weights=weights,
        config=cfg,
        curves=curves,
        best_epoch=best_epoch,
        best_val=best_val,
        steps=steps,
        wall_seconds=time.time() - started,
        final_train_loss=last_epoch_loss,
    )


def _batch_token_count(cfg, cache, batch) -> float:
    count = 0.0
    for sample in batch:
        template = cache.template_for(sample)
        n_t = len(template.gt)
        n_tar = n_t + len(sample.gt)
        flags = cache.mask_for(sample, n_tar)
        if cfg.masked_loss_scope == "query":
            flags = flags.copy()
            flags[:n_t] = False
        count += float(flags.sum())
    return count
