"""MLP forward/backward, Adam, the finite-difference checker, and the PRNG."""

import math

import numpy as np
import pytest

from asloc.errors import NumericError, ShapeError
from asloc.numerics import (
    AdamState,
    MlpParams,
    adam_step,
    finite_diff_check,
    init_adam,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    xavier_init,
    zeros_like_params,
)
from tests.conftest import zero_mlp


# ---------------------------------------------------------------- mlp_forward

def test_forward_zero_params_gives_zero_output():
    params = zero_mlp(3, 5, 2)
    out, _ = mlp_forward(params, np.random.default_rng(0).normal(size=(4, 3)))
    assert np.array_equal(out, np.zeros((4, 2)))


def test_forward_identity_network_reproduces_input():
    # hidden ReLU passes non-negative inputs through an identity weight
    params = MlpParams(w1=np.eye(3), b1=np.zeros(3), w2=np.eye(3), b2=np.zeros(3))
    x = np.abs(np.random.default_rng(1).normal(size=(6, 3)))
    out, _ = mlp_forward(params, x)
    assert np.allclose(out, x)


def test_forward_is_row_local():
    rng = make_rng(2)
    params = init_mlp(rng, 4, 7, 2)
    x = rng.normal(size=(3, 4))
    full, _ = mlp_forward(params, x)
    rows = [mlp_forward(params, x[i : i + 1])[0][0] for i in range(3)]
    # batched and single-row matmuls may differ in the final ulp (BLAS
    # accumulation order); row independence itself is what matters
    assert np.allclose(full, np.vstack(rows), rtol=0, atol=1e-12)


def test_forward_row_permutation_permutes_output():
    rng = make_rng(3)
    params = init_mlp(rng, 4, 5, 3)
    x = rng.normal(size=(8, 4))
    perm = rng.permutation(8)
    out, _ = mlp_forward(params, x)
    out_perm, _ = mlp_forward(params, x[perm])
    assert np.array_equal(out[perm], out_perm)


def test_forward_shape_mismatch_raises():
    params = zero_mlp(3, 4, 2)
    with pytest.raises(ShapeError):
        mlp_forward(params, np.zeros((5, 7)))
    with pytest.raises(ShapeError):
        mlp_forward(params, np.zeros(3))


def test_forward_nonfinite_output_raises():
    params = zero_mlp(2, 3, 1)
    params.w1[:] = 1.0
    params.w2[:] = np.inf
    with pytest.raises(NumericError):
        mlp_forward(params, np.ones((2, 2)))


# --------------------------------------------------------------- mlp_backward

def test_backward_zero_output_grad_gives_zero_grads():
    rng = make_rng(4)
    params = init_mlp(rng, 3, 4, 2)
    _, cache = mlp_forward(params, rng.normal(size=(5, 3)))
    grads, gx = mlp_backward(params, cache, np.zeros((5, 2)))
    for arr in grads.arrays():
        assert np.array_equal(arr, np.zeros_like(arr))
    assert np.array_equal(gx, np.zeros((5, 3)))


def test_backward_single_linear_unit():
    # f(w) = w * x with x = 2 (ReLU inactive on the pass-through path is
    # avoided by making everything positive)
    params = MlpParams(
        w1=np.array([[1.0]]), b1=np.zeros(1), w2=np.array([[1.0]]), b2=np.zeros(1)
    )
    x = np.array([[2.0]])
    _, cache = mlp_forward(params, x)
    grads, _ = mlp_backward(params, cache, np.array([[1.0]]))
    # d(out)/d(w1) = x * w2 = 2; d(out)/d(w2) = relu(x*w1) = 2
    assert grads.w1[0, 0] == 2.0
    assert grads.w2[0, 0] == 2.0
    assert grads.b1[0] == 1.0 and grads.b2[0] == 1.0


def test_backward_matches_finite_differences():
    rng = make_rng(5)
    params = init_mlp(rng, 3, 4, 2)
    x = rng.normal(size=(5, 3))
    target = rng.normal(size=(5, 2))

    def loss_and_grad():
        out, cache = mlp_forward(params, x)
        diff = out - target
        grads, _ = mlp_backward(params, cache, diff)
        return 0.5 * float(np.sum(diff * diff)), grads.arrays()

    assert finite_diff_check(loss_and_grad, params.arrays()) < 1e-4


def test_backward_mismatched_grad_shape_raises():
    params = zero_mlp(3, 4, 2)
    _, cache = mlp_forward(params, np.zeros((5, 3)))
    with pytest.raises(ShapeError):
        mlp_backward(params, cache, np.zeros((4, 2)))


# ----------------------------------------------------------------- adam_step

def test_adam_first_step_moves_by_lr():
    arrays = [np.array([1.0])]
    state = init_adam(arrays, lr=1e-4)
    adam_step(arrays, [np.array([0.5])], state)
    # bias-corrected first step equals -lr * sign(g) up to eps
    assert math.isclose(arrays[0][0], 1.0 - 1e-4, rel_tol=0, abs_tol=1e-8)
    assert state.t == 1


def test_adam_zero_grads_is_identity():
    arrays = [np.array([1.0, -2.0]), np.array([[3.0]])]
    before = [a.copy() for a in arrays]
    state = init_adam(arrays, lr=0.1, weight_decay=0.0)
    adam_step(arrays, [np.zeros_like(a) for a in arrays], state)
    for a, b in zip(arrays, before):
        assert np.array_equal(a, b)
    assert state.t == 1


def test_adam_reduces_quadratic_loss():
    w = [np.array([3.0])]
    state = init_adam(w, lr=0.1)
    start = float(w[0][0] ** 2)
    for _ in range(2):
        adam_step(w, [2.0 * w[0]], state)
    assert float(w[0][0] ** 2) < start


def test_adam_weight_decay_shrinks_params():
    w = [np.array([2.0])]
    state = init_adam(w, lr=0.1, weight_decay=0.5)
    adam_step(w, [np.zeros(1)], state)
    assert math.isclose(w[0][0], 2.0 * (1.0 - 0.1 * 0.5))


def test_adam_nonfinite_grad_reports_coordinate():
    w = [np.array([[1.0, 2.0], [3.0, 4.0]])]
    state = init_adam(w)
    bad = np.zeros((2, 2))
    bad[1, 0] = np.nan
    with pytest.raises(NumericError, match=r"\(1, 0\)"):
        adam_step(w, [bad], state)


# ---------------------------------------------------------- finite_diff_check

def test_finite_diff_linear_function():
    w = np.array([2.0])

    def f():
        return 3.0 * float(w[0]), [np.array([3.0])]

    assert finite_diff_check(f, [w]) < 1e-9


def test_finite_diff_quadratic():
    w = np.array([1.0])

    def f():
        return float(w[0] ** 2), [2.0 * w]

    assert finite_diff_check(f, [w]) < 1e-6


def test_finite_diff_detects_wrong_gradient():
    w = np.array([1.0])

    def f():
        return float(w[0] ** 2), [np.array([-2.0 * w[0]])]  # sign flipped

    assert finite_diff_check(f, [w]) > 1.0


def test_finite_diff_nan_loss_raises():
    w = np.array([1.0])

    def f():
        return float("nan"), [np.array([0.0])]

    with pytest.raises(NumericError):
        finite_diff_check(f, [w])


# -------------------------------------------------------------- init helpers

def test_xavier_bound_and_determinism():
    limit = math.sqrt(6.0 / 2.0)
    value = xavier_init(make_rng(9), 1, 1)
    assert value.shape == (1, 1) and abs(value[0, 0]) <= limit
    again = xavier_init(make_rng(9), 1, 1)
    assert np.array_equal(value, again)


def test_xavier_large_sample_mean_near_zero():
    sample = xavier_init(make_rng(10), 512, 512)
    assert abs(sample.mean()) < 0.01
    assert np.abs(sample).max() <= math.sqrt(6.0 / 1024.0)


def test_xavier_bad_shape_raises():
    with pytest.raises(ShapeError):
        xavier_init(make_rng(0), 0, 5)


def test_init_mlp_deterministic_and_zero_biases():
    a = init_mlp(make_rng(11), 3, 4, 2)
    b = init_mlp(make_rng(11), 3, 4, 2)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    assert np.array_equal(a.b1, np.zeros(4))
    assert np.array_equal(a.b2, np.zeros(2))


def test_zeros_like_params_shapes():
    params = init_mlp(make_rng(12), 3, 4, 2)
    zeros = zeros_like_params(params)
    for z, p in zip(zeros.arrays(), params.arrays()):
        assert z.shape == p.shape and not z.any()


def test_make_rng_key_sensitivity():
    assert make_rng(1, 2).normal() == make_rng(1, 2).normal()
    assert make_rng(1, 2).normal() != make_rng(2, 1).normal()


def test_adam_state_buffers_mirror_params():
    params = init_mlp(make_rng(13), 3, 4, 2)
    state = init_adam(params.arrays())
    assert isinstance(state, AdamState)
    for m, v, p in zip(state.m, state.v, params.arrays()):
        assert m.shape == p.shape and v.shape == p.shape
