import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deidjoint.neural import (BiLstm, Linear, LstmDirection, NumericalError, Parameter, bilstm_backward,
                              bilstm_forward, clip_grad_norm, dropout, dropout_backward, dumps_checkpoint,
                              grad_check, load_into, loads_checkpoint, relu, relu_backward, rng_stream,
                              sgd_step, sigmoid)


def linear_closure(layer, X, R):
    def f():
        Y, cache = layer.forward(X.value)
        X.grad += layer.backward(R, cache)
        return float(np.sum(Y * R))
    return f


def test_linear_zero_and_identity():
    rng = np.random.default_rng(0)
    layer = Linear("l", 3, 3, rng)
    layer.W.value[...] = 0.0
    X = rng.normal(size=(2, 3))
    assert np.all(layer.forward(X)[0] == 0.0)
    layer.W.value[...] = np.eye(3)
    assert np.array_equal(layer.forward(X)[0], X)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 10**6))
def test_linear_grad_check(n, d_in, d_out, seed):
    rng = np.random.default_rng(seed)
    layer = Linear("l", d_in, d_out, rng)
    layer.b.value[...] = rng.normal(size=d_out)
    X = Parameter("X", rng.normal(size=(n, d_in)))
    R = rng.normal(size=(n, d_out))
    report = grad_check(linear_closure(layer, X, R), layer.params + [X])
    assert report.max_error < 1e-4, report.errors


def test_linear_3x5_to_4():
    rng = np.random.default_rng(1)
    layer = Linear("l", 5, 4, rng)
    X = Parameter("X", rng.normal(size=(3, 5)))
    assert grad_check(linear_closure(layer, X, rng.normal(size=(3, 4))), layer.params + [X]).max_error < 1e-4


def test_relu_examples():
    out, mask = relu(np.array([-1.0, 0.0, 2.0]))
    assert out.tolist() == [0.0, 0.0, 2.0]
    assert relu_backward(np.ones(2), relu(np.array([-1.0, 2.0]))[1]).tolist() == [0.0, 1.0]
    assert relu_backward(np.ones(1), relu(np.array([0.0]))[1]).tolist() == [0.0]


def test_relu_grad_check_away_from_zero():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 6))
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    X = Parameter("X", x)
    R = rng.normal(size=x.shape)

    def f():
        Y, mask = relu(X.value)
        X.grad += relu_backward(R, mask)
        return float(np.sum(Y * R))
    assert grad_check(f, [X]).max_error < 1e-4


def test_sigmoid_stable():
    x = np.array([-1000.0, 0.0, 1000.0])
    assert np.all(np.isfinite(sigmoid(x)))
    assert sigmoid(x).tolist() == [0.0, 0.5, 1.0]


def test_lstm_forget_bias():
    d = LstmDirection("d", 2, 3, np.random.default_rng(0))
    assert d.b.value.tolist() == [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0]


def _step(direction, x):
    h = direction.hidden
    z = direction.W_ih.value @ x + direction.b.value
    # With zero previous state the forget gate drops out
    i, g, o = sigmoid(z[:h]), np.tanh(z[2 * h:3 * h]), sigmoid(z[3 * h:])
    return o * np.tanh(i * g)


def test_bilstm_single_step():
    rng = np.random.default_rng(3)
    enc = BiLstm("e", 4, 3, rng)
    x = rng.normal(size=(1, 4))
    H, _ = bilstm_forward(enc, x)
    expected = np.concatenate([_step(enc.fwd, x[0]), _step(enc.bwd, x[0])])
    np.testing.assert_allclose(H[0], expected, rtol=0, atol=1e-14)


def test_bilstm_reversal_swaps_halves():
    rng = np.random.default_rng(4)
    enc = BiLstm("e", 4, 3, rng)
    X = rng.normal(size=(5, 4))
    H, _ = bilstm_forward(enc, X)
    # The backward direction of X is the forward direction of reversed X when weights match
    enc2 = BiLstm("e2", 4, 3, rng)
    for a, b in zip(enc2.fwd.params, enc.bwd.params):
        a.value[...] = b.value
    for a, b in zip(enc2.bwd.params, enc.fwd.params):
        a.value[...] = b.value
    H2, _ = bilstm_forward(enc2, X[::-1])
    np.testing.assert_allclose(H2[:, :3], H[::-1, 3:], atol=1e-14)
    np.testing.assert_allclose(H2[:, 3:], H[::-1, :3], atol=1e-14)


def test_bilstm_grad_check_all_params_and_inputs():
    rng = np.random.default_rng(5)
    enc = BiLstm("e", 4, 3, rng)
    for p in enc.params:
        p.value += rng.normal(0, 0.3, p.shape)
    X = Parameter("X", rng.normal(size=(5, 4)))
    R = rng.normal(size=(5, 6))

    def f():
        H, cache = bilstm_forward(enc, X.value)
        X.grad += bilstm_backward(enc, R, cache)
        return float(np.sum(H * R))
    report = grad_check(f, enc.params + [X])
    assert report.max_error < 1e-4, report.errors


def test_bilstm_padding_matches_unpadded():
    rng = np.random.default_rng(6)
    enc = BiLstm("e", 3, 2, rng)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
    X = np.zeros((2, 4, 3))
    X[0], X[1, :2] = a, b
    H, _ = enc.forward(X, [4, 2])
    np.testing.assert_allclose(H[0], bilstm_forward(enc, a)[0], atol=1e-14)
    np.testing.assert_allclose(H[1, :2], bilstm_forward(enc, b)[0], atol=1e-14)


def test_batched_bilstm_grad_check():
    rng = np.random.default_rng(7)
    enc = BiLstm("e", 3, 2, rng)
    X = Parameter("X", rng.normal(size=(2, 4, 3)))
    X.value[1, 3:] = 0.0
    lengths = [4, 3]
    R = rng.normal(size=(2, 4, 4))
    R[1, 3:] = 0.0

    def f():
        H, cache = enc.forward(X.value, lengths)
        X.grad += enc.backward(R, cache)
        return float(np.sum(H * R))
    assert grad_check(f, enc.params + [X]).max_error < 1e-4


def test_forward_does_not_mutate_input():
    rng = np.random.default_rng(8)
    enc = BiLstm("e", 3, 2, rng)
    X = rng.normal(size=(4, 3))
    X0 = X.copy()
    H1, _ = bilstm_forward(enc, X)
    H2, _ = bilstm_forward(enc, X)
    assert np.array_equal(X, X0) and np.array_equal(H1, H2)


def test_sgd_examples():
    w = Parameter("w", np.array([1.0]))
    w.grad[...] = 2.0
    sgd_step([w], 0.0)
    assert w.value.tolist() == [1.0]
    w.grad[...] = 2.0
    sgd_step([w], 0.1)
    assert w.value[0] == pytest.approx(0.8, abs=1e-15)
    assert w.grad[0] == 0.0
    w.value[...] = 1.0
    for _ in range(2):
        w.grad[...] = 2 * w.value
        sgd_step([w], 0.1)
    assert w.value[0] == pytest.approx(0.64, abs=1e-15)


def test_sgd_rejects_non_finite():
    w = Parameter("layer.w", np.zeros(2))
    w.grad[0] = np.nan
    with pytest.raises(NumericalError, match="layer.w"):
        sgd_step([w], 0.1)


def test_sgd_skips_frozen():
    w = Parameter("w", np.ones(2), trainable=False)
    w.grad[...] = 1.0
    sgd_step([w], 0.1)
    assert w.value.tolist() == [1.0, 1.0]


def test_clip_grad_norm():
    w = Parameter("w", np.zeros(2))
    w.grad[...] = [3.0, 4.0]
    assert clip_grad_norm([w], 1.0) == pytest.approx(5.0)
    assert np.linalg.norm(w.grad) == pytest.approx(1.0)


def test_grad_check_quadratic_and_negative_control():
    w = Parameter("w", np.array([1.3]))

    def f():
        w.grad += 2 * w.value
        return float(w.value[0] ** 2)
    assert grad_check(f, [w]).max_error < 1e-8

    def bad():
        w.grad += 1.1 * 2 * w.value
        return float(w.value[0] ** 2)
    assert grad_check(bad, [w]).max_error > 5e-2


def test_dropout():
    X = np.ones((100, 10))
    assert dropout(X, 0.0, np.random.default_rng(0))[1] is None
    Y, keep = dropout(X, 0.5, np.random.default_rng(0))
    assert set(np.unique(Y)) <= {0.0, 2.0}
    assert np.array_equal(dropout_backward(np.ones_like(X), keep), keep)


def test_rng_streams_are_independent_and_reproducible():
    a = rng_stream(0, "init").random(5)
    assert np.array_equal(a, rng_stream(0, "init").random(5))
    assert not np.array_equal(a, rng_stream(0, "shuffle").random(5))
    assert not np.array_equal(a, rng_stream(1, "init").random(5))


def test_checkpoint_round_trip():
    rng = np.random.default_rng(9)
    params = [Parameter("a", rng.normal(size=(2, 3))), Parameter("b.c", rng.normal(size=4)),
              Parameter("s", np.array(1.5))]
    blob = dumps_checkpoint(params)
    assert blob[:8] == b"DJCKPT\x00\x00"
    records = loads_checkpoint(blob)
    for p, (name, v) in zip(params, records):
        assert name == p.name and np.array_equal(v, p.value)
    fresh = [Parameter(p.name, np.zeros(p.shape)) for p in params]
    load_into(fresh, blob)
    assert all(np.array_equal(a.value, b.value) for a, b in zip(fresh, params))
    assert dumps_checkpoint(fresh) == blob


def test_checkpoint_mismatches():
    blob = dumps_checkpoint([Parameter("a", np.zeros((2, 3)))])
    with pytest.raises(ValueError, match="shape mismatch"):
        load_into([Parameter("a", np.zeros((3, 2)))], blob)
    with pytest.raises(ValueError, match="do not match"):
        load_into([Parameter("b", np.zeros((2, 3)))], blob)
    with pytest.raises(ValueError, match="magic"):
        loads_checkpoint(b"garbage!" + blob[8:])
    with pytest.raises(ValueError, match="trailing"):
        loads_checkpoint(blob + b"\x00")
