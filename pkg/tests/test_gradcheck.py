import numpy as np
import pytest

from baroslip import gradcheck
from baroslip.nn_core import ParamStore


def test_rel_error_floor():
    assert gradcheck.rel_error(1.0, 1.0) == 0.0
    assert gradcheck.rel_error(2.0, 1.0) == pytest.approx(0.5)
    # both tiny: the absolute floor keeps the ratio bounded
    assert gradcheck.rel_error(1e-9, 0.0) == pytest.approx(1e-3)


def test_central_difference_on_quadratic():
    x = np.array([0.3, -1.2])
    g = gradcheck.central_difference(lambda: 0.5 * float(np.sum(x ** 2)), x, 1)
    assert g == pytest.approx(-1.2, abs=1e-9)
    np.testing.assert_array_equal(x, [0.3, -1.2])  # restored


def test_check_layer_detects_a_wrong_gradient():
    from baroslip.nn_core import Dense

    rng = np.random.default_rng(0)
    store = ParamStore()
    layer = Dense(store, "fc", 3, 2, rng)
    err, _ = gradcheck.check_layer(layer, store, rng.normal(size=(2, 3)), rng)
    assert err < gradcheck.TOLERANCE
    orig = layer.backward
    layer.backward = lambda g: 1.5 * orig(g)
    err, _ = gradcheck.check_layer(layer, store, rng.normal(size=(2, 3)), rng)
    assert err > gradcheck.TOLERANCE


def test_suite_small():
    results = gradcheck.run_suite(seed=3, n_configs=3, include_default=False)
    names = {r.name for r in results}
    assert {"conv", "layer_norm", "selu", "dropout", "dense", "softmax_cross_entropy", "tcn_random_config"} <= names
    assert all(r.passed for r in results), results
