"""Gradient verification suite shared by the CLI and the acceptance tests.

Two layers of checking: per-op central finite differences on small random
tensors, and an end-to-end directional-derivative check through the full
loss -> transformer -> hand forward chain on a dim-16, 1-layer configuration
(every weight participates via random directions).
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..hand import build_rig
from ..rng import derive_rng, seeded_rng
from .config import RunConfig
from .synth import generate_corpus
from .trainer import _SampleCache, _batch_loss

__all__ = ["op_gradient_suite", "end_to_end_gradient_check", "run_gradient_suite"]


def _op_cases(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    m2 = rng.standard_normal((4, 2))
    pos = np.abs(rng.standard_normal((3, 4))) + 0.5
    return [
        ("add", lambda x: T.tsum(T.add(x, T.Tensor(b))), a),
        ("mul", lambda x: T.tsum(T.mul(x, T.Tensor(b))), a),
        ("div", lambda x: T.tsum(T.div(T.Tensor(b), x)), pos),
        ("matmul", lambda x: T.tsum(T.matmul(x, T.Tensor(m2))), a),
        ("softmax", lambda x: T.tsum(T.mul(T.softmax(x), T.Tensor(b))), a),
        ("layer_norm", lambda x: T.tsum(T.mul(T.layer_norm(x), T.Tensor(b))), a),
        ("tanh", lambda x: T.tsum(T.tanh(x)), a),
        ("sqrt", lambda x: T.tsum(T.sqrt(x)), pos),
        ("sin", lambda x: T.tsum(T.sin(x)), a),
        ("cos", lambda x: T.tsum(T.cos(x)), a),
        ("sum_sq", lambda x: T.sum_sq(x), a),
        ("sum_abs", lambda x: T.sum_abs(x), pos),
        ("max", lambda x: T.tsum(T.tmax(x, axis=1)), a),
        ("concat", lambda x: T.tsum(T.mul(T.concat([x, T.Tensor(b)], axis=1), 0.5)), a),
        ("gather", lambda x: T.tsum(T.gather(x, [2, 0, 1], axis=0)), a),
        ("where", lambda x: T.tsum(T.where(b > 0, x, T.mul(x, 2.0))), a),
        ("reshape", lambda x: T.sum_sq(T.reshape(x, (2, 6))), a),
        ("swapaxes", lambda x: T.sum_sq(T.swapaxes(x, 0, 1)), a),
        ("mean", lambda x: T.tmean(x), a),
        ("exp", lambda x: T.tsum(T.exp(T.mul(x, 0.3))), a),
    ]


def op_gradient_suite(seeds: int = 20, h: float = 1e-5) -> list[tuple[str, float]]:
    """(op name, worst relative error) across seeds; autodiff vs central FD."""
    worst: dict[str, float] = {}
    for seed in range(seeds):
        rng = seeded_rng(40_000 + seed)
        for name, fn, x0 in _op_cases(rng):
            xt = T.Tensor(x0, requires_grad=True)
            with T.Tape():
                T.backward(fn(xt))
            grad = xt.grad
            flat = x0.ravel()
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                xp, xm = flat.copy(), flat.copy()
                xp[i] += h
                xm[i] -= h
                fd[i] = (
                    fn(T.Tensor(xp.reshape(x0.shape))).item()
                    - fn(T.Tensor(xm.reshape(x0.shape))).item()
                ) / (2 * h)
            rel = np.abs(grad.ravel() - fd) / np.maximum(1e-6, np.abs(fd))
            worst[name] = max(worst.get(name, 0.0), float(rel.max()))
    return sorted(worst.items())


def _tiny_setup(seed: int = 0):
    cfg = RunConfig(
        seed=seed,
        train_size=6,
        val_size=2,
        test_size=2,
        epochs=1,
        batch_size=6,
        d_model=16,
        n_layers=1,
        n_heads=2,
        feat_dim=16,
        val_interval=0,
    )
    rig = build_rig(cfg.rig_seed)
    corpus, db = generate_corpus(cfg, rig)
    for record in db.records:
        record.validated = True
    from ..retrieval import MockVlmClient, load_prompts

    prompts = load_prompts()
    client = MockVlmClient(corpus.metadata_for_mock(), prompts)
    return cfg, rig, corpus, db, client, prompts


def end_to_end_gradient_check(
    n_directions: int = 12, h: float = 1e-5, seed: int = 0
) -> tuple[float, int]:
    """Directional FD through loss -> transformer -> hand forward.

    Returns (worst relative error over random directions, parameter count).
    Directions are dense over every weight tensor, so all weights are
    exercised jointly; a handful of single coordinates are also probed.
    """
    from ..icl.weights import PipelineWeights

    cfg, rig, corpus, db, client, prompts = _tiny_setup(seed)
    weights = PipelineWeights(cfg, derive_rng(cfg.seed, "weights"))
    # nudge the zero-initialized decoder so its gradient path is generic
    nudge = derive_rng(cfg.seed, "nudge")
    for name in ("dec.w2", "dec.b2"):
        weights.params[name].data += 0.01 * nudge.standard_normal(weights[name].shape)
    cache = _SampleCache(cfg, corpus, db, client, prompts, rig)
    batch = [s for s in corpus.split("train") if s.sides]

    names = sorted(weights.params)
    sizes = {n: weights[n].data.size for n in names}

    def loss_value() -> float:
        total, _ = _batch_loss(cfg, cache, rig, weights, batch)
        return float(total.data)

    def grads() -> dict[str, np.ndarray]:
        with T.Tape():
            total, _ = _batch_loss(cfg, cache, rig, weights, batch)
            T.backward(total)
        out = {n: weights[n].grad.copy() for n in names}
        for n in names:
            weights[n].grad = None
        return out

    g = grads()
    rng = derive_rng(seed, "directions")
    worst = 0.0
    for _ in range(n_directions):
        direction = {n: rng.standard_normal(weights[n].shape) for n in names}
        norm = np.sqrt(sum((d * d).sum() for d in direction.values()))
        direction = {n: d / norm for n, d in direction.items()}
        analytic = sum(float((g[n] * direction[n]).sum()) for n in names)
        for n in names:
            weights[n].data += h * direction[n]
        up = loss_value()
        for n in names:
            weights[n].data -= 2 * h * direction[n]
        down = loss_value()
        for n in names:
            weights[n].data += h * direction[n]
        fd = (up - down) / (2 * h)
        rel = abs(analytic - fd) / max(1e-8, abs(fd))
        worst = max(worst, rel)
    return worst, sum(sizes.values())


def run_gradient_suite(print_fn=print) -> bool:
    """CLI entry: run both layers, print one line per check, return pass/fail."""
    ok = True
    for name, err in op_gradient_suite(seeds=5):
        passed = err < 1e-3
        ok &= passed
        print_fn(f"[grad-check] op {name:<12} rel err {err:.2e}  {'PASS' if passed else 'FAIL'}")
    worst, n_params = end_to_end_gradient_check()
    passed = worst < 1e-2
    ok &= passed
    print_fn(
        f"[grad-check] end-to-end ({n_params} weights) rel err {worst:.2e}  "
        f"{'PASS' if passed else 'FAIL'}"
    )
    return ok
