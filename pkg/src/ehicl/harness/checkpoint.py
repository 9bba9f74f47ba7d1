"""Checkpoint persistence: weights + config + rig reference + step count."""

from __future__ import annotations

from ..icl.weights import PipelineWeights
from ..serial import ManifestMismatchError, read_blob, write_blob
from .config import RunConfig

__all__ = ["CHECKPOINT_MAGIC", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_MAGIC = "EHICL1"


def save_checkpoint(path, weights: PipelineWeights, cfg: RunConfig, rig_seed: int, step: int) -> None:
    meta = {
        "version": 1,
        "config": cfg.as_dict(),
        "rig_seed": int(rig_seed),
        "step": int(step),
        "lambdas": cfg.lambdas,
        "dims": {"d_model": cfg.d_model, "n_layers": cfg.n_layers, "n_heads": cfg.n_heads},
        "param_count": weights.param_count,
    }
    write_blob(path, CHECKPOINT_MAGIC, meta, weights.state_arrays())


def load_checkpoint(path) -> tuple[PipelineWeights, RunConfig, dict]:
    meta, arrays = read_blob(path, CHECKPOINT_MAGIC)
    cfg = RunConfig.from_dict(meta["config"])
    weights = PipelineWeights(cfg)
    try:
        weights.load_state_arrays(arrays)
    except ValueError as exc:
        raise ManifestMismatchError(f"{path}: {exc}") from exc
    return weights, cfg, meta
