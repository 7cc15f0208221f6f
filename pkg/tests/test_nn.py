"""Network engine tests: forward/backward against independent references,
Adam behaviour, and initialization statistics."""
import math

import numpy as np
import pytest

from triplearn.errors import ConfigError, NumericError, ShapeError
from triplearn.nn import (
    IDENTITY,
    RELU,
    AdamState,
    LayerGrads,
    LayerParams,
    MLPParams,
    adam_step,
    backward,
    forward,
    init_params,
)


def reference_forward(layers, x):
    """Straight-line re-derivation of the forward pass: explicit loops over
    matrix-vector products, no shared code with the engine."""
    a = list(x)
    for weights, biases, activation in layers:
        out = []
        for row, b in zip(weights, biases):
            z = sum(w * v for w, v in zip(row, a)) + b
            out.append(max(z, 0.0) if activation == "relu" else z)
        a = out
    return np.array(a)


def random_net(rng, sizes=None):
    if sizes is None:
        depth = rng.integers(1, 4)
        sizes = [int(rng.integers(2, 7)) for _ in range(depth + 1)]
    layers = []
    for i in range(1, len(sizes)):
        act = IDENTITY if i == len(sizes) - 1 else RELU
        layers.append(
            LayerParams(
                rng.normal(size=(sizes[i], sizes[i - 1])),
                rng.normal(size=sizes[i]),
                act,
            )
        )
    return MLPParams(layers)


class TestForward:
    def test_identity_layer_passes_input_through(self):
        params = MLPParams([LayerParams(np.eye(2), np.zeros(2), IDENTITY)])
        out, _ = forward(params, np.array([1.0, 2.0]))
        assert np.array_equal(out, [1.0, 2.0])

    def test_relu_clamps_negative_preactivation(self):
        params = MLPParams([LayerParams(np.array([[1.0, -1.0]]), np.zeros(1), RELU)])
        out, cache = forward(params, np.array([2.0, 3.0]))
        assert cache.pre[0][0, 0] == -1.0
        assert out[0] == 0.0

    def test_matches_reference_evaluator_on_random_nets(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            params = random_net(rng)
            x = rng.normal(size=params.input_dim)
            expected = reference_forward(
                [(l.weights, l.biases, l.activation) for l in params.layers], x
            )
            out, _ = forward(params, x)
            np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_pure_repeated_calls_bit_identical(self):
        rng = np.random.default_rng(3)
        params = random_net(rng)
        x = rng.normal(size=params.input_dim)
        out1, _ = forward(params, x)
        out2, _ = forward(params, x)
        assert np.array_equal(out1, out2)

    def test_dimension_mismatch_names_layer(self):
        params = MLPParams([LayerParams(np.eye(3), np.zeros(3), IDENTITY)])
        with pytest.raises(ShapeError, match="layer 0"):
            forward(params, np.array([1.0, 2.0]))

    def test_finite_inputs_stay_finite(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            params = random_net(rng)
            x = rng.normal(size=params.input_dim) * 1e6
            out, _ = forward(params, x)
            assert np.all(np.isfinite(out))


def flatten_params(params):
    return np.concatenate([np.r_[l.weights.ravel(), l.biases.ravel()] for l in params.layers])


def unflatten_like(params, vec):
    layers = []
    pos = 0
    for l in params.layers:
        n_w = l.weights.size
        w = vec[pos : pos + n_w].reshape(l.weights.shape)
        pos += n_w
        b = vec[pos : pos + l.biases.size]
        pos += l.biases.size
        layers.append(LayerParams(w, b, l.activation))
    return MLPParams(layers)


def scalar_loss(params, x, out_weights):
    out, _ = forward(params, x)
    return float(out @ out_weights)


def finite_difference_param_grad(params, x, out_weights, h=1e-5):
    """Central differences for d(out_weights . forward(x)) / d theta."""
    theta = flatten_params(params)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        plus[i] += h
        minus = theta.copy()
        minus[i] -= h
        grad[i] = (
            scalar_loss(unflatten_like(params, plus), x, out_weights)
            - scalar_loss(unflatten_like(params, minus), x, out_weights)
        ) / (2 * h)
    return grad


class TestBackward:
    def test_identity_layer_chain_rule_base_case(self):
        params = MLPParams([LayerParams(np.eye(2), np.zeros(2), IDENTITY)])
        x = np.array([3.0, -1.0])
        _, cache = forward(params, x)
        g = np.array([0.5, 2.0])
        grads, input_grad = backward(params, cache, g)
        np.testing.assert_array_equal(grads[0].weights, np.outer(g, x))
        np.testing.assert_array_equal(grads[0].biases, g)
        np.testing.assert_array_equal(input_grad, g)

    def test_zero_output_grad_gives_zero_gradients(self):
        rng = np.random.default_rng(5)
        params = random_net(rng)
        x = rng.normal(size=params.input_dim)
        _, cache = forward(params, x)
        grads, input_grad = backward(params, cache, np.zeros(params.output_dim))
        for g in grads:
            assert not g.weights.any()
            assert not g.biases.any()
        assert not input_grad.any()

    def test_gradient_check_20_random_nets(self):
        # Analytic gradients vs central differences (h=1e-5), rel err < 1e-4,
        # skipping coordinates whose pre-activation magnitude is < 1e-6.
        rng = np.random.default_rng(2024)
        for _ in range(20):
            params = random_net(rng)
            x = rng.normal(size=params.input_dim)
            out_weights = rng.normal(size=params.output_dim)
            _, cache = forward(params, x)
            if min(np.abs(z).min() for z in cache.pre) < 1e-6:
                continue
            grads, _ = backward(params, cache, out_weights)
            analytic = np.concatenate(
                [np.r_[g.weights.ravel(), g.biases.ravel()] for g in grads]
            )
            numeric = finite_difference_param_grad(params, x, out_weights)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
            assert np.max(np.abs(analytic - numeric) / denom) < 1e-4

    def test_cache_mismatch_raises(self):
        rng = np.random.default_rng(9)
        params = random_net(rng, [3, 4, 2])
        _, cache = forward(params, rng.normal(size=3))
        with pytest.raises(ShapeError):
            backward(params, cache, np.zeros(5))


def reference_adam_scalar(grad_fn, w0, lr, beta1=0.9, beta2=0.999, eps=1e-8, steps=100):
    """Scalar Adam, written straight from the update equations."""
    w, m, v = w0, 0.0, 0.0
    trace = [w]
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        w = w - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(w)
    return trace


def one_param_net(value):
    return MLPParams([LayerParams(np.array([[value]]), np.zeros(1), IDENTITY)])


class TestAdam:
    def test_first_step_closed_form(self):
        params = one_param_net(1.0)
        grads = [LayerGrads(np.array([[0.5]]), np.zeros(1))]
        state = AdamState.for_params(params, learning_rate=1e-4)
        new_params, new_state = adam_step(params, grads, state)
        expected = 1.0 - 1e-4 * (0.5 / (0.5 + 1e-8))
        assert abs(new_params.layers[0].weights[0, 0] - expected) < 1e-12
        assert new_state.step == 1

    def test_zero_gradient_is_parameter_identity(self):
        rng = np.random.default_rng(1)
        params = random_net(rng)
        zero = [LayerGrads(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in params.layers]
        state = AdamState.for_params(params, learning_rate=0.1)
        current = params
        for expected_step in range(1, 4):
            current, state = adam_step(current, zero, state)
            assert state.step == expected_step
        for before, after in zip(params.layers, current.layers):
            np.testing.assert_array_equal(before.weights, after.weights)
            np.testing.assert_array_equal(before.biases, after.biases)

    def test_quadratic_descent_matches_scalar_reference(self):
        # f(w) = w^2, df/dw = 2w, from w=1 with lr 1e-2.
        trace = reference_adam_scalar(lambda w: 2 * w, 1.0, 1e-2, steps=100)
        params = one_param_net(1.0)
        state = AdamState.for_params(params, learning_rate=1e-2)
        engine_trace = [params.layers[0].weights[0, 0]]
        for _ in range(100):
            w = params.layers[0].weights[0, 0]
            grads = [LayerGrads(np.array([[2 * w]]), np.zeros(1))]
            params, state = adam_step(params, grads, state)
            engine_trace.append(params.layers[0].weights[0, 0])
        np.testing.assert_allclose(engine_trace, trace, rtol=1e-12)
        window = [abs(w) for w in engine_trace[:11]]
        assert all(b < a for a, b in zip(window, window[1:]))
        assert abs(engine_trace[-1]) < 0.9

    def test_nonfinite_gradient_names_block(self):
        params = one_param_net(1.0)
        grads = [LayerGrads(np.array([[np.nan]]), np.zeros(1))]
        state = AdamState.for_params(params)
        with pytest.raises(NumericError, match="layer 0 weights"):
            adam_step(params, grads, state)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_params([4, 8, 3], seed=42)
        b = init_params([4, 8, 3], seed=42)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.biases, lb.biases)

    def test_bound_respected(self):
        params = init_params([10, 20], seed=0)
        bound = np.sqrt(6 / 30)
        assert np.all(np.abs(params.layers[0].weights) <= bound)
        assert not params.layers[0].biases.any()

    def test_final_layer_identity_hidden_relu(self):
        params = init_params([5, 7, 7, 2], seed=1)
        assert [l.activation for l in params.layers] == [RELU, RELU, IDENTITY]

    def test_weight_mean_near_zero(self):
        # 10^4 samples from U(-bound, bound): mean within 3 standard errors.
        params = init_params([100, 100], seed=123)
        w = params.layers[0].weights.ravel()
        bound = np.sqrt(6 / 200)
        stderr = (2 * bound / np.sqrt(12)) / np.sqrt(w.size)
        assert abs(w.mean()) < 3 * stderr

    def test_empty_architecture_rejected(self):
        with pytest.raises(ConfigError):
            init_params([5], seed=0)
        with pytest.raises(ConfigError):
            init_params([], seed=0)
