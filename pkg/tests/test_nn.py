import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabinr import nn


def scalar_forward(net, x):
    """Straight-line re-implementation with explicit loops."""
    a = [float(v) for v in x]
    n_layers = len(net.weights)
    for l in range(n_layers):
        w, b = net.weights[l], net.biases[l]
        z = [sum(w[o, i] * a[i] for i in range(len(a))) + b[o] for o in range(w.shape[0])]
        if l == n_layers - 1:
            return z[0]
        w0 = net.layer_omega(l)
        if net.activation == "relu":
            a = [max(v, 0.0) for v in z]
        elif net.activation == "siren":
            a = [math.sin(w0 * v) for v in z]
        else:
            a = [math.tanh(net.beta * math.sin(w0 * v)) for v in z]


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return np.linalg.norm(a - b) / denom


def central_diff(f, h=1e-5):
    """Fourth-order central difference of a scalar function at 0. HOSC's
    per-layer gain (beta * omega0 = 240) makes the two-point stencil's
    truncation error alone reach ~1e-4."""
    return (f(-2 * h) - 8 * f(-h) + 8 * f(h) - f(2 * h)) / (12 * h)


def numeric_grads(net, x, h=1e-5):
    out = {}
    for name, p in net.params().items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]

            def f(d):
                p[idx] = old + d
                y = nn.forward(net, x)[0]
                p[idx] = old
                return y

            g[idx] = central_diff(f, h)
        out[name] = g
    gx = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = 1.0
        gx[i] = central_diff(lambda d: nn.forward(net, x + d * e)[0], h)
    return out, gx


def test_zero_net_outputs_zero():
    net = nn.init_net([4, 8, 8, 1], "siren", seed=0)
    for w in net.weights:
        w[...] = 0.0
    for b in net.biases:
        b[...] = 0.0
    assert nn.forward(net, np.array([1.0, -2.0, 3.0, 0.5]))[0] == 0.0


def test_identity_relu_by_hand():
    net = nn.MlpNet([np.eye(2), np.ones((1, 2))], [np.zeros(2), np.zeros(1)], "relu")
    y, cache = nn.forward(net, np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(np.maximum(cache.preacts[0], 0), [[0.0, 2.0]])
    assert y == 2.0


@pytest.mark.parametrize("act", nn.ACTIVATIONS)
@pytest.mark.parametrize("depth", [1, 2, 4])
def test_forward_matches_scalar_oracle(act, depth):
    net = nn.init_net([5] + [6] * depth + [1], act, seed=depth)
    rng = np.random.default_rng(depth)
    for _ in range(5):
        x = rng.normal(0, 0.5, 5)
        assert abs(nn.forward(net, x)[0] - scalar_forward(net, x)) < 1e-12


def test_linear_net_closed_form_gradient():
    net = nn.MlpNet([np.array([[0.5, -1.0, 2.0]])], [np.array([0.25])], "relu")
    x = np.array([1.0, 2.0, 3.0])
    y, cache = nn.forward(net, x)
    assert y == pytest.approx(0.5 - 2 + 6 + 0.25)
    grads, dx = nn.backward(net, cache)
    np.testing.assert_array_equal(grads["b0"], [1.0])
    np.testing.assert_array_equal(grads["W0"], [x])
    np.testing.assert_array_equal(dx, [0.5, -1.0, 2.0])


def test_siren_single_unit_chain_rule():
    w, x, w0 = 0.3, 0.7, 30.0
    net = nn.MlpNet([np.array([[w]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)], "siren", omega0=w0)
    y, cache = nn.forward(net, np.array([x]))
    assert y == pytest.approx(math.sin(w0 * w * x), abs=1e-15)
    grads, _ = nn.backward(net, cache)
    assert grads["W0"][0, 0] == pytest.approx(w0 * x * math.cos(w0 * w * x), rel=1e-12)


@pytest.mark.parametrize("act", nn.ACTIVATIONS)
@pytest.mark.parametrize("depth", [1, 2, 4])
def test_gradients_match_finite_differences(act, depth):
    net = nn.init_net([4] + [5] * depth + [1], act, seed=10 + depth)
    x = np.random.default_rng(depth).normal(0, 0.3, 4)
    y, cache = nn.forward(net, x)
    grads, dx = nn.backward(net, cache)
    num, num_x = numeric_grads(net, x)
    for name in grads:
        assert rel_err(grads[name], num[name]) < 1e-4, name
    assert rel_err(dx, num_x) < 1e-4


def test_batch_gradients_are_sums_of_sample_gradients():
    net = nn.init_net([3, 7, 7, 1], "siren", seed=1)
    x = np.random.default_rng(0).normal(size=(6, 3))
    dout = np.linspace(-1, 1, 6)
    _, cache = nn.forward_batch(net, x)
    grads, dx = nn.backward_batch(net, cache, dout)
    for k in range(6):
        _, c = nn.forward(net, x[k])
        g, d = nn.backward(net, c, dout[k])
        np.testing.assert_allclose(dx[k], d, atol=1e-13)
    total = {n: sum(nn.backward(net, nn.forward(net, x[k])[1], dout[k])[0][n] for k in range(6)) for n in grads}
    for n in grads:
        np.testing.assert_allclose(grads[n], total[n], atol=1e-12)


def test_errors():
    net = nn.init_net([3, 4, 1], "relu", seed=0)
    with pytest.raises(ValueError, match="width"):
        nn.forward(net, np.zeros(4))
    with pytest.raises(ValueError, match="non-finite"):
        nn.forward(net, np.array([0.0, np.nan, 1.0]))
    other = nn.init_net([3, 4, 4, 1], "relu", seed=0)
    _, cache = nn.forward(other, np.zeros(3))
    with pytest.raises(ValueError, match="cache"):
        nn.backward(net, cache)
    with pytest.raises(ValueError):
        nn.init_net([3, 4, 2], "relu")
    with pytest.raises(ValueError):
        nn.init_net([3, 4, 1], "wire")


def test_init_is_deterministic_and_bounded():
    a = nn.init_net([64, 256, 256, 1], "siren", seed=3)
    b = nn.init_net([64, 256, 256, 1], "siren", seed=3)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert np.abs(a.weights[0]).max() <= 1 / 64
    for w in a.weights[1:-1]:
        assert np.abs(w).max() <= math.sqrt(6 / w.shape[1]) / 30
    assert np.abs(a.weights[-1]).max() <= math.sqrt(6 / 256) / nn.OUTPUT_INIT_DIV
    assert np.abs(a.weights[-1]).max() > math.sqrt(6 / 256) / 30
    r = nn.init_net([64, 256, 1], "relu", seed=3)
    assert np.abs(r.weights[0]).max() <= math.sqrt(6 / 64)
    assert not r.biases[0].any()


def test_siren_init_health():
    net = nn.init_net([64, 256, 256, 1], "siren", seed=0)
    x = np.random.default_rng(1).normal(size=(1000, 64))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    std = nn.predict(net, x).std()
    assert 0.1 <= std <= 2.0


def test_inverted_dropout_preserves_expectation():
    net = nn.init_net([3, 16, 16, 1], "siren", seed=2, dropout=0.3)
    x = np.array([[0.2, -0.4, 0.1]])
    clean = np.sin(30.0 * (x @ net.weights[0].T + net.biases[0]))[0]
    reps = 40_000
    _, cache = nn.forward_batch(net, np.repeat(x, reps, axis=0), train=True, rng=np.random.default_rng(0))
    # cache.inputs[1] holds the first hidden layer's output after dropout
    dropped = cache.inputs[1]
    assert set(np.unique(cache.drops[0])) <= {0.0, 1 / 0.7}
    np.testing.assert_allclose(dropped.mean(axis=0), clean, rtol=0.02)
    with pytest.raises(ValueError, match="rng"):
        nn.forward_batch(net, x, train=True)


def test_inference_ignores_dropout():
    net = nn.init_net([3, 16, 1], "siren", seed=2, dropout=0.5)
    x = np.ones((4, 3))
    np.testing.assert_array_equal(nn.predict(net, x), nn.forward_batch(net, x)[0])


def test_cosine_schedule():
    assert nn.cosine_lr(0, 1e-3, 100) == 1e-3
    assert nn.cosine_lr(100, 1e-3, 100, 1e-5) == pytest.approx(1e-5)
    assert nn.cosine_lr(50, 1.0, 100) == pytest.approx(0.5)
    lrs = [nn.cosine_lr(t, 1.0, 40, 0.1) for t in range(41)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert nn.cosine_lr(7, 0.01, None) == 0.01


def scalar_adam(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(1e-4, 1e-1))
def test_adam_matches_scalar_oracle(gs, lr):
    p = {"w": np.array([0.5])}
    state = nn.OptimizerState(lr=lr)
    for g in gs:
        nn.adam_step(p, {"w": np.array([g])}, state)
    assert p["w"][0] == pytest.approx(scalar_adam(0.5, gs, lr), rel=1e-12, abs=1e-15)


def test_adam_zero_gradient_leaves_params_and_decays_moments():
    p = {"w": np.array([1.0, -2.0])}
    state = nn.OptimizerState(lr=0.1)
    state.m["w"] = np.zeros(2)
    state.v["w"] = np.array([4.0, 4.0])
    nn.adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    np.testing.assert_allclose(state.v["w"], 0.999 * 4.0)


def test_adam_quadratic_decreases_monotonically():
    p = {"w": np.array([1.0])}
    state = nn.OptimizerState(lr=0.01)
    prev = 1.0
    for _ in range(50):
        nn.adam_step(p, {"w": 2 * p["w"]}, state)
        assert abs(p["w"][0]) < prev
        prev = abs(p["w"][0])


def test_adam_rejects_non_finite_gradient():
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = nn.OptimizerState()
    with pytest.raises(nn.NonFiniteGradientError) as exc:
        nn.adam_step(p, {"a": np.array([0.1]), "b": np.array([np.inf])}, state)
    assert exc.value.name == "b"
    assert p["a"][0] == 1.0 and state.step == 0


def test_net_serialization_roundtrip(tmp_path):
    net = nn.init_net([4, 6, 6, 1], "hosc", seed=5, dropout=0.1, beta=4.0)
    path = tmp_path / "net.json"
    nn.save_net(net, path)
    again = nn.load_net(path)
    x = np.random.default_rng(0).normal(size=(10, 4))
    np.testing.assert_array_equal(nn.predict(net, x), nn.predict(again, x))
    assert again.activation == "hosc" and again.beta == 4.0 and again.dims == net.dims
