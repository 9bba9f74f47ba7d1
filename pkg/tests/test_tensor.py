"""Engine tests: op semantics, gradients vs finite differences, tape behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ehicl.tensor
from ehicl import tensor as T
from ehicl.rng import seeded_rng

from oracles import central_difference


def test_matmul_identity():
    rng = seeded_rng(0)
    a = rng.standard_normal((3, 3))
    out = T.matmul(T.Tensor(np.eye(3)), T.Tensor(a))
    assert np.array_equal(out.data, a)


def test_softmax_uniform():
    out = T.softmax(T.Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_layer_norm_constant_vector():
    out = T.layer_norm(T.Tensor([4.2, 4.2, 4.2, 4.2]))
    assert np.abs(out.data).max() < 1e-3
    assert np.allclose(out.data, 0.0)


def test_backward_sum():
    x = T.Tensor([1.0, 2.0, 3.0, 4.0], requires_grad=True)
    with T.Tape():
        loss = T.tsum(x)
        T.backward(loss)
    assert np.array_equal(x.grad, np.ones(4))


def test_backward_elementwise_square():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape():
        loss = T.tsum(T.mul(x, x))
        T.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0], atol=1e-12)


def test_backward_mlp_matches_finite_differences():
    """Random 3-layer MLP gradient against the central-difference oracle."""
    rng = seeded_rng(11)
    w1, w2, w3 = (rng.standard_normal(s) for s in ((5, 8), (8, 8), (8, 1)))
    b1, b2, b3 = (rng.standard_normal(s) for s in (8, 8, 1))
    x0 = rng.standard_normal(5)

    def run(x):
        h1 = T.tanh(T.add(T.matmul(T.Tensor(x), T.Tensor(w1)), T.Tensor(b1)))
        h2 = T.tanh(T.add(T.matmul(h1, T.Tensor(w2)), T.Tensor(b2)))
        return T.tsum(T.add(T.matmul(h2, T.Tensor(w3)), T.Tensor(b3)))

    def run_on(x):
        xt = T.Tensor(x, requires_grad=True)
        with T.Tape():
            h1 = T.tanh(T.add(T.matmul(xt, T.Tensor(w1)), T.Tensor(b1)))
            h2 = T.tanh(T.add(T.matmul(h1, T.Tensor(w2)), T.Tensor(b2)))
            loss = T.tsum(T.add(T.matmul(h2, T.Tensor(w3)), T.Tensor(b3)))
            T.backward(loss)
        return xt.grad

    grad = run_on(x0)
    fd = central_difference(lambda x: run(x).item(), x0)
    rel = np.abs(grad - fd) / np.maximum(1e-8, np.abs(fd))
    assert rel.max() < 1e-3


def _op_cases(rng):
    a2 = rng.standard_normal((3, 4))
    b2 = rng.standard_normal((3, 4))
    m1 = rng.standard_normal((3, 4))
    m2 = rng.standard_normal((4, 2))
    batch_a = rng.standard_normal((2, 3, 4))
    batch_b = rng.standard_normal((2, 4, 3))
    pos = np.abs(rng.standard_normal((3, 4))) + 0.5
    return [
        ("add", lambda x: T.tsum(T.add(x, T.Tensor(b2))), a2),
        ("add_broadcast", lambda x: T.tsum(T.add(x, T.Tensor(b2[0]))), a2),
        ("sub", lambda x: T.tsum(T.sub(T.Tensor(b2), x)), a2),
        ("mul", lambda x: T.tsum(T.mul(x, T.Tensor(b2))), a2),
        ("div", lambda x: T.tsum(T.div(T.Tensor(b2), x)), pos),
        ("neg", lambda x: T.tsum(T.neg(x)), a2),
        ("matmul", lambda x: T.tsum(T.matmul(x, T.Tensor(m2))), m1),
        ("matmul_batched", lambda x: T.tsum(T.matmul(x, T.Tensor(batch_b))), batch_a),
        ("matmul_vec", lambda x: T.tsum(T.matmul(x, T.Tensor(m2))), rng.standard_normal(4)),
        ("softmax", lambda x: T.tsum(T.mul(T.softmax(x), T.Tensor(b2))), a2),
        ("layer_norm", lambda x: T.tsum(T.mul(T.layer_norm(x), T.Tensor(b2))), a2),
        ("tanh", lambda x: T.tsum(T.tanh(x)), a2),
        ("sqrt", lambda x: T.tsum(T.sqrt(x)), pos),
        ("exp", lambda x: T.tsum(T.exp(x)), a2),
        ("sin", lambda x: T.tsum(T.sin(x)), a2),
        ("cos", lambda x: T.tsum(T.cos(x)), a2),
        ("abs", lambda x: T.tsum(T.absolute(x)), pos),
        ("sum_axis", lambda x: T.tsum(T.mul(T.tsum(x, axis=1), T.Tensor(b2[:, 0]))), a2),
        ("mean", lambda x: T.tmean(x), a2),
        ("mean_axis", lambda x: T.tsum(T.mul(T.tmean(x, axis=0), T.Tensor(b2[0]))), a2),
        ("max", lambda x: T.tsum(T.tmax(x, axis=1)), a2),
        ("sum_abs", lambda x: T.sum_abs(x), pos),
        ("sum_sq", lambda x: T.sum_sq(x), a2),
        ("concat", lambda x: T.tsum(T.mul(T.concat([x, T.Tensor(b2)], axis=1), 1.5)), a2),
        ("reshape", lambda x: T.tsum(T.mul(T.reshape(x, (4, 3)), T.Tensor(b2.reshape(4, 3)))), a2),
        ("swapaxes", lambda x: T.tsum(T.mul(T.swapaxes(x, 0, 1), T.Tensor(b2.T))), a2),
        ("slice", lambda x: T.tsum(T.mul(x[1:, 0:2], 2.0)), a2),
        ("gather", lambda x: T.tsum(T.gather(x, [2, 0, 1], axis=0)), a2),
        ("where", lambda x: T.tsum(T.where(b2 > 0, x, T.mul(x, 3.0))), a2),
    ]


def test_gradcheck_every_op_20_seeds():
    """Autodiff vs central finite differences, rel err < 1e-3, 20 seeds per op."""
    for seed in range(20):
        rng = seeded_rng(1000 + seed)
        for name, fn, x0 in _op_cases(rng):
            xt = T.Tensor(x0, requires_grad=True)
            with T.Tape():
                loss = fn(xt)
                T.backward(loss)
            fd = central_difference(lambda x: fn(T.Tensor(x)).item(), x0)
            denom = np.maximum(1e-6, np.abs(fd))
            rel = np.abs(xt.grad - fd) / denom
            assert rel.max() < 1e-3, f"{name} (seed {seed}): rel err {rel.max():.2e}"


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 9))
def test_softmax_rows_stochastic(seed, n, d):
    rng = seeded_rng(seed)
    y = T.softmax(T.Tensor(rng.standard_normal((n, d)) * 5)).data
    assert np.all(y >= 0)
    assert np.abs(y.sum(axis=-1) - 1.0).max() < 1e-9


def test_tape_replay_determinism():
    def run():
        rng = seeded_rng(5)
        x = T.Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        w = T.Tensor(rng.standard_normal((4, 4)))
        with T.Tape():
            loss = T.sum_sq(T.tanh(T.matmul(x, w)))
            T.backward(loss)
        return loss.item(), x.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_backward_linearity():
    rng = seeded_rng(9)
    x0 = rng.standard_normal(6)
    a, b = 2.5, -1.25

    def grad_of(fn):
        x = T.Tensor(x0, requires_grad=True)
        with T.Tape():
            T.backward(fn(x))
        return x.grad

    gf = grad_of(lambda x: T.sum_sq(x))
    gg = grad_of(lambda x: T.tsum(T.sin(x)))
    gc = grad_of(lambda x: T.add(T.mul(T.sum_sq(x), a), T.mul(T.tsum(T.sin(x)), b)))
    assert np.abs(gc - (a * gf + b * gg)).max() < 1e-9


def test_gradients_accumulate_across_uses():
    x = T.Tensor([3.0], requires_grad=True)
    with T.Tape():
        loss = T.tsum(T.add(T.mul(x, x), T.mul(x, 4.0)))  # x^2 + 4x
        T.backward(loss)
    assert np.allclose(x.grad, [10.0])


def test_shape_mismatch_errors_name_op_and_shapes():
    with pytest.raises(T.ShapeMismatchError, match=r"matmul.*\(3, 4\).*\(3, 4\)"):
        T.matmul(T.Tensor(np.zeros((3, 4))), T.Tensor(np.zeros((3, 4))))
    with pytest.raises(T.ShapeMismatchError, match=r"add.*\(2, 3\).*\(4,\)"):
        T.add(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros(4)))


def test_non_scalar_loss_rejected():
    x = T.Tensor(np.zeros(3), requires_grad=True)
    with T.Tape():
        y = T.mul(x, 2.0)
        with pytest.raises(T.TapeError, match="scalar"):
            T.backward(y)


def test_backward_without_tape_rejected():
    x = T.Tensor(np.zeros(1), requires_grad=True)
    with pytest.raises(T.TapeError, match="tape"):
        T.backward(x)


def test_debug_mode_rejects_non_finite(monkeypatch):
    monkeypatch.setattr(ehicl.tensor, "_DEBUG_FINITE", True)
    with pytest.raises(FloatingPointError):
        T.Tensor([1.0, np.nan])
    with pytest.raises(FloatingPointError):
        T.div(T.Tensor([1.0]), T.Tensor([0.0]))


def test_no_recording_without_tape():
    x = T.Tensor(np.ones(3), requires_grad=True)
    y = T.mul(x, 2.0)
    assert not y.requires_grad
