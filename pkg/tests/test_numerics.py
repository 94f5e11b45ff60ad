import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsicap.numerics import (
    AdamState,
    LstmParams,
    adam_step,
    cross_entropy,
    dropout,
    gelu,
    gelu_grad,
    gradient_check,
    lstm_run,
    lstm_run_backward,
    lstm_step,
    lstm_step_backward,
    lstm_step_cached,
    sigmoid,
    softmax,
    xavier_uniform,
)


def test_gelu_at_zero():
    assert gelu(np.array([0.0]))[0] == 0.0


def test_gelu_at_one_matches_erf_table():
    # 0.5 * (1 + erf(1/sqrt(2))) with erf(0.70710678...) = 0.68268949...
    npt.assert_allclose(gelu(np.array([1.0]))[0], 0.8413447460685429, atol=1e-12)


def test_gelu_grad_matches_finite_difference():
    xs = np.linspace(-3, 3, 25)
    eps = 1e-6
    numeric = (gelu(xs + eps) - gelu(xs - eps)) / (2 * eps)
    npt.assert_allclose(gelu_grad(xs), numeric, atol=1e-8)


def test_softmax_sums_to_one_and_positive():
    p = softmax(np.array([3.0, -1.0, 0.5, 10.0]))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert (p > 0).all()


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
       st.floats(-100, 100))
def test_softmax_shift_invariant(values, shift):
    x = np.array(values)
    npt.assert_allclose(softmax(x), softmax(x + shift), atol=1e-12)


def test_cross_entropy_perfect_prediction():
    p = np.array([0.0, 1.0, 0.0])
    loss, grad = cross_entropy(p, 1)
    assert loss == pytest.approx(0.0, abs=1e-9)
    npt.assert_allclose(grad, [0.0, 0.0, 0.0], atol=1e-12)


def test_cross_entropy_uniform_four_classes():
    loss, grad = cross_entropy(np.full(4, 0.25), 2)
    assert loss == pytest.approx(1.3862943611198906, abs=1e-12)
    assert abs(grad.sum()) <= 1e-12


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(np.full(4, 0.25), 4)


def test_dropout_rate_zero_and_inference_identity():
    x = np.arange(5, dtype=float)
    rng = np.random.default_rng(0)
    npt.assert_array_equal(dropout(x, 0.0, rng, training=True), x)
    npt.assert_array_equal(dropout(x, 0.9, rng, training=False), x)


def test_dropout_survivor_fraction():
    rng = np.random.default_rng(42)
    x = np.ones(10_000)
    y = dropout(x, 0.5, rng, training=True)
    surviving = np.count_nonzero(y) / x.size
    assert abs(surviving - 0.5) <= 0.02
    # survivors are scaled by 1/(1-rate)
    assert set(np.unique(y)) == {0.0, 2.0}


def test_lstm_zero_parameters_give_zero_state():
    params = LstmParams(3, 2, np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
    h, c = lstm_step(params, np.array([1.0, -2.0, 0.5]), np.zeros(2), np.zeros(2))
    npt.assert_array_equal(h, np.zeros(2))
    npt.assert_array_equal(c, np.zeros(2))


def test_lstm_two_unit_hand_computed():
    # frozen from a scalar-arithmetic trace of the standard cell equations
    w = np.array([[0.5, -0.3], [0.2, 0.4], [-0.1, 0.6], [0.3, 0.2],
                  [0.7, -0.5], [0.1, 0.1], [-0.4, 0.3], [0.2, -0.2]])
    u = np.array([[0.1, 0.2], [-0.3, 0.4], [0.5, -0.1], [0.2, 0.3],
                  [-0.2, 0.1], [0.4, -0.3], [0.3, 0.5], [-0.1, 0.2]])
    b = np.array([0.1, -0.2, 0.3, 0.0, 0.05, -0.05, 0.2, -0.1])
    params = LstmParams(2, 2, w, u, b)
    h, c = lstm_step(params, np.array([0.4, -0.7]),
                     np.array([0.1, -0.2]), np.array([0.3, 0.05]))
    npt.assert_allclose(h, [-0.0014551519657100866, 0.0254662057929148], atol=1e-9)
    npt.assert_allclose(c, [-0.0022224462321384364, 0.050470958491763133], atol=1e-9)


def test_lstm_states_stay_bounded_over_100_steps():
    rng = np.random.default_rng(7)
    params = LstmParams.create(4, 6, rng)
    h, c = np.zeros(6), np.zeros(6)
    for _ in range(100):
        h, c = lstm_step(params, rng.standard_normal(4), h, c)
        assert np.all(np.abs(h) < 1.0)
        # |c_t| <= |c_{t-1}| + 1 so 100 steps bound it by 100
        assert np.all(np.abs(c) < 100.0)


def test_lstm_dimension_mismatch():
    params = LstmParams.create(4, 6, np.random.default_rng(0))
    with pytest.raises(ValueError):
        lstm_step(params, np.zeros(3), np.zeros(6), np.zeros(6))


def test_lstm_step_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    params = LstmParams.create(3, 4, rng)
    x = rng.standard_normal(3)
    h0 = rng.standard_normal(4)
    c0 = rng.standard_normal(4)
    weight = rng.standard_normal(4)  # project h to a scalar loss

    def loss_fn(p):
        lp = LstmParams(3, 4, p["w"], p["u"], p["b"])
        h, _ = lstm_step(lp, x, h0, c0)
        return float(weight @ h)

    h, _, cache = lstm_step_cached(params, x, h0, c0)
    grads = {"w": np.zeros_like(params.w), "u": np.zeros_like(params.u),
             "b": np.zeros_like(params.b)}
    lstm_step_backward(params, cache, weight, np.zeros(4), grads)
    params_dict = {"w": params.w, "u": params.u, "b": params.b}
    assert gradient_check(loss_fn, params_dict, grads, epsilon=1e-5) < 1e-6


def test_lstm_sequence_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    params = LstmParams.create(3, 4, rng)
    xs = [rng.standard_normal(3) for _ in range(5)]
    weight = rng.standard_normal(4)

    def loss_fn(p):
        lp = LstmParams(3, 4, p["w"], p["u"], p["b"])
        h, _, _ = lstm_run(lp, xs)
        return float(weight @ h)

    _, _, caches = lstm_run(params, xs)
    grads = {"w": np.zeros_like(params.w), "u": np.zeros_like(params.u),
             "b": np.zeros_like(params.b)}
    lstm_run_backward(params, caches, weight, grads)
    params_dict = {"w": params.w, "u": params.u, "b": params.b}
    assert gradient_check(loss_fn, params_dict, grads, epsilon=1e-5) < 1e-6


def test_adam_zero_gradient_is_fixed_point():
    state = AdamState()
    params = {"p": np.array([1.0, -2.0, 3.0])}
    for _ in range(5):
        params = adam_step(state, params, {"p": np.zeros(3)})
    npt.assert_array_equal(params["p"], [1.0, -2.0, 3.0])


def test_adam_first_step_closed_form():
    # constant gradient 1: bias-corrected ratio is 1, update ~= -lr
    state = AdamState(lr=1e-3)
    params = adam_step(state, {"p": np.array([0.5])}, {"p": np.array([1.0])})
    assert params["p"][0] == pytest.approx(0.5 - 1e-3, abs=1e-9)


def test_adam_deterministic():
    grads = [np.array([0.3, -0.2]), np.array([-0.1, 0.4]), np.array([0.05, 0.0])]

    def run():
        state = AdamState()
        params = {"p": np.array([1.0, 1.0])}
        for g in grads:
            params = adam_step(state, params, {"p": g})
        return params["p"]

    npt.assert_array_equal(run(), run())


def test_adam_rejects_non_finite_gradient():
    state = AdamState()
    with pytest.raises(FloatingPointError):
        adam_step(state, {"p": np.zeros(2)}, {"p": np.array([1.0, np.nan])})


def test_gradient_check_quadratic():
    a = np.array([2.0, -1.0, 0.5])

    def loss_fn(params):
        return float(np.sum(a * params["x"] ** 2))

    x = np.array([1.0, 3.0, -2.0])
    analytic = {"x": 2.0 * a * x}
    assert gradient_check(loss_fn, {"x": x}, analytic, epsilon=1e-5) < 1e-7


def test_gradient_check_zero_loss_region():
    def loss_fn(params):
        return 0.0

    err = gradient_check(loss_fn, {"x": np.zeros(3)}, {"x": np.zeros(3)})
    assert err == 0.0


@settings(max_examples=30)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31 - 1))
def test_xavier_bound(n_in, n_out, seed):
    rng = np.random.default_rng(seed)
    w = xavier_uniform(n_in, n_out, rng)
    bound = math.sqrt(6.0) / math.sqrt(n_in + n_out)
    assert np.all(np.abs(w) <= bound)


def test_sigmoid_midpoint():
    assert sigmoid(np.array([0.0]))[0] == 0.5
