import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baroslip.errors import ConfigError, NumericError, ShapeError, StateError
from baroslip.nn_core import (
    SELU_ALPHA,
    SELU_SCALE,
    AdamState,
    CausalConv,
    Dense,
    Dropout,
    LayerNorm,
    ParamStore,
    Selu,
    adam_step,
    check_finite,
    cross_entropy,
    dense,
    dilated_causal_conv1d,
    dropout,
    he_normal,
    layer_norm,
    selu,
    softmax,
    softmax_xent_grad,
)


def conv_loops(x, kernel, d):
    """Direct triple loop; the reference for the gather-based version."""
    c_out, c_in, k = kernel.shape
    T = x.shape[1]
    out = np.zeros((c_out, T))
    for o in range(c_out):
        for t in range(T):
            for i in range(c_in):
                for j in range(k):
                    s = t - j * d
                    if s >= 0:
                        out[o, t] += kernel[o, i, j] * x[i, s]
    return out


# -- convolution ---------------------------------------------------------------

def test_conv_hand_example():
    out = dilated_causal_conv1d(np.array([[1.0, 2.0, 4.0]]), np.array([[[1.0, -1.0]]]), 1)
    np.testing.assert_array_equal(out, [[1.0, 1.0, 2.0]])


@pytest.mark.parametrize("d", [1, 3, 16])
def test_conv_identity_kernel(d):
    x = np.random.default_rng(0).normal(size=(4, 30))
    np.testing.assert_array_equal(dilated_causal_conv1d(x, np.eye(4)[:, :, None], d), x)


def test_conv_zero_input():
    k = np.random.default_rng(1).normal(size=(3, 2, 3))
    assert not dilated_causal_conv1d(np.zeros((2, 20)), k, 2).any()


@given(c_in=st.integers(1, 4), c_out=st.integers(1, 4), k=st.integers(1, 4), d=st.integers(1, 6),
       T=st.integers(1, 40), seed=st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_conv_matches_loops(c_in, c_out, k, d, T, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c_in, T))
    kern = rng.normal(size=(c_out, c_in, k))
    np.testing.assert_allclose(dilated_causal_conv1d(x, kern, d), conv_loops(x, kern, d), atol=1e-12)


@given(seed=st.integers(0, 2**31 - 1), a=st.floats(-5, 5), b=st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_conv_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 3, 25))
    kern = rng.normal(size=(2, 3, 3))
    lhs = dilated_causal_conv1d(a * x + b * y, kern, 2)
    rhs = a * dilated_causal_conv1d(x, kern, 2) + b * dilated_causal_conv1d(y, kern, 2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@given(seed=st.integers(0, 2**31 - 1), t=st.integers(0, 29), d=st.integers(1, 8))
@settings(max_examples=50, deadline=None)
def test_conv_causal(seed, t, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 30))
    kern = rng.normal(size=(3, 2, 3))
    x2 = x.copy()
    x2[:, t] += rng.normal(size=2)
    a, b = dilated_causal_conv1d(x, kern, d), dilated_causal_conv1d(x2, kern, d)
    np.testing.assert_array_equal(a[:, :t], b[:, :t])


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        dilated_causal_conv1d(np.zeros((3, 10)), np.zeros((2, 4, 3)), 1)
    with pytest.raises(ConfigError):
        dilated_causal_conv1d(np.zeros((3, 10)), np.zeros((2, 3, 3)), 0)


# -- layer norm ----------------------------------------------------------------

def test_layer_norm_examples():
    np.testing.assert_array_equal(layer_norm([5.0, 5.0, 5.0], 1.0, 0.0), [0, 0, 0])
    np.testing.assert_allclose(layer_norm([1.0, 2.0, 3.0], 1.0, 0.0, eps=0.0),
                               [-math.sqrt(1.5), 0.0, math.sqrt(1.5)], atol=1e-12)
    x = np.random.default_rng(2).normal(size=7)
    bias = np.arange(7.0)
    np.testing.assert_array_equal(layer_norm(x, np.zeros(7), bias), bias)


def test_layer_norm_moments():
    x = np.random.default_rng(3).normal(3.0, 4.0, size=(50, 8))
    y = layer_norm(x, 1.0, 0.0, eps=0.0)
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-12)


def test_layer_norm_single_feature_guard():
    with pytest.raises(ConfigError):
        layer_norm([3.0], 1.0, 0.0, eps=0.0)
    assert layer_norm([3.0], 1.0, 0.0, eps=1e-5)[0] == 0.0


# -- activations, dropout, dense, softmax --------------------------------------

def test_selu_values():
    assert selu(0.0) == 0.0
    assert selu(1.0) == pytest.approx(1.0507009874, abs=1e-10)
    assert selu(-1.0) == pytest.approx(-1.1113307, abs=1e-7)
    assert selu(-1.0) == pytest.approx(SELU_SCALE * SELU_ALPHA * (math.exp(-1) - 1), abs=1e-15)


def test_dropout_modes():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 10))
    assert dropout(x, 0.5, rng, training=False) is x
    np.testing.assert_array_equal(dropout(x, 0.0, rng), x)
    with pytest.raises(ConfigError):
        dropout(x, 1.0, rng)


def test_dropout_fraction_and_scale():
    y = dropout(np.ones(100_000), 0.2, np.random.default_rng(5))
    assert abs(np.mean(y == 0) - 0.2) < 0.01
    np.testing.assert_allclose(y[y != 0], 1.25)


def test_dropout_deterministic():
    a = dropout(np.ones(1000), 0.3, np.random.default_rng(9))
    b = dropout(np.ones(1000), 0.3, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_dense_and_weight_gradient_is_outer_product():
    store = ParamStore()
    layer = Dense(store, "fc", 4, 3, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(1, 4))
    g = np.random.default_rng(2).normal(size=(1, 3))
    out = layer.forward(x, training=True)
    np.testing.assert_allclose(out, dense(x, store["fc.weight"], store["fc.bias"]))
    layer.backward(g)
    np.testing.assert_allclose(store.grad("fc.weight"), np.outer(g[0], x[0]), atol=1e-14)


def test_softmax_and_cross_entropy():
    np.testing.assert_array_equal(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    p = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0) and 0 < p[1] < 1e-12
    assert cross_entropy(np.array([1.0, 0.0]), 0) == pytest.approx(0.0, abs=1e-12)
    loss, flag = cross_entropy(p, 1, return_flag=True)
    assert flag and loss == pytest.approx(-math.log(1e-12))


@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_softmax_normalisation(seed, scale):
    z = np.random.default_rng(seed).uniform(-1, 1, size=(5, 4)) * scale
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(p > 0)


def test_softmax_xent_grad_matches_finite_difference():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(3, 2))
    y = np.array([0, 1, 1])
    g = softmax_xent_grad(softmax(z), y)
    h = 1e-6
    for i in range(3):
        for j in range(2):
            zp, zm = z.copy(), z.copy()
            zp[i, j] += h
            zm[i, j] -= h
            num = (cross_entropy(softmax(zp), y) - cross_entropy(softmax(zm), y)) / (2 * h)
            assert g[i, j] == pytest.approx(num, abs=1e-8)


def test_check_finite():
    check_finite(np.ones(3))
    with pytest.raises(NumericError):
        check_finite(np.array([1.0, np.nan]))


# -- init and optimiser ----------------------------------------------------------

def test_he_normal():
    w = he_normal((1_000_000, 2), np.random.default_rng(0))
    assert abs(w.std() - 1.0) < 0.01
    np.testing.assert_array_equal(he_normal((4, 3, 3), np.random.default_rng(1)), he_normal((4, 3, 3), np.random.default_rng(1)))
    assert not np.array_equal(he_normal((4, 3), np.random.default_rng(1)), he_normal((4, 3), np.random.default_rng(2)))


def test_adam_first_step():
    store = ParamStore()
    store.add("w", np.array([1.0, 1.0]))
    store.accumulate("w", np.array([1.0, -1.0]))
    state = AdamState()
    adam_step(store, state)
    np.testing.assert_allclose(store["w"], [1.0 - 0.002, 1.0 + 0.002], atol=1e-10)
    assert state.t == 1


def test_adam_zero_grad_no_change():
    store = ParamStore()
    store.add("w", np.arange(4.0))
    adam_step(store, AdamState())
    np.testing.assert_array_equal(store["w"], np.arange(4.0))


def test_adam_inconsistent_state():
    store = ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(StateError):
        adam_step(store, AdamState(t=3))


def test_scalar_quadratic_gradient():
    # loss = 0.5 w^2 has gradient w; Adam should drive w toward 0
    store = ParamStore()
    store.add("w", np.array([0.7]))
    state = AdamState(lr=0.05)
    for _ in range(300):
        store.zero_grad()
        store.accumulate("w", store["w"].copy())
        adam_step(store, state)
    assert abs(store["w"][0]) < 0.05


# -- layer objects ----------------------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda s, r: CausalConv(s, "c", 2, 3, 3, 2, r),
    lambda s, r: LayerNorm(s, "ln", 3),
    lambda s, r: Selu(),
    lambda s, r: Dropout(0.2),
    lambda s, r: Dense(s, "d", 3, 2, r),
])
def test_backward_before_forward(make):
    layer = make(ParamStore(), np.random.default_rng(0))
    with pytest.raises(StateError):
        layer.backward(np.zeros((1, 5, 3)))


def test_causal_conv_layer_matches_function():
    store = ParamStore()
    rng = np.random.default_rng(0)
    layer = CausalConv(store, "c", 3, 4, 3, 4, rng)
    x = rng.normal(size=(2, 40, 3))   # (B, T, C)
    out = layer.forward(x)
    for b in range(2):
        ref = dilated_causal_conv1d(x[b].T, store["c"], 4).T
        np.testing.assert_allclose(out[b], ref, atol=1e-12)


def test_param_store_order_and_shapes():
    store = ParamStore()
    store.add("b", np.zeros(2))
    store.add("a", np.zeros((2, 2)))
    assert store.names() == ["b", "a"]
    with pytest.raises(ConfigError):
        store.add("a", np.zeros(1))
    with pytest.raises(ShapeError):
        store.set("a", np.zeros(3))
    assert store.num_values() == 6
