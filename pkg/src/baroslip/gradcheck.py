"""Finite-difference verification of every layer's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn_core import (
    CausalConv,
    Dense,
    Dropout,
    LayerNorm,
    ParamStore,
    Selu,
    cross_entropy,
    softmax,
    softmax_xent_grad,
)
from .baselines import FreqCnnConfig, build_freq_cnn
from .tcn import TcnConfig, build, receptive_field

STEP = 1e-5
TOLERANCE = 1e-4
# gradients smaller than this are compared absolutely; float64 round-off in
# the central difference is ~1e-11 for O(1) losses
ABS_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def rel_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR)


def central_difference(f, x: np.ndarray, idx, h: float = STEP, signature=None) -> float:
    """d f / d x[idx], perturbing ``x`` in place and restoring it.

    ``signature`` (optional) returns the activation pattern of every SELU
    evaluated by the last ``f()`` call.  If the +-h evaluations land on a
    different side of a SELU kink than the base point, the step is shrunk
    (down to 1e-8) so the difference stays within one smooth piece.
    """
    old = x[idx]
    base = None
    if signature is not None:
        f()
        base = signature()
    while True:
        x[idx] = old + h
        fp = f()
        crossed = base is not None and not _same(signature(), base)
        x[idx] = old - h
        fm = f()
        crossed = crossed or (base is not None and not _same(signature(), base))
        x[idx] = old
        if not crossed or h <= 1e-8:
            return (fp - fm) / (2.0 * h)
        h /= 10.0


def _same(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def selu_signature(layers):
    """Closure over SELU layers reporting which inputs were positive."""
    selus = [layer for layer in layers if isinstance(layer, Selu)]

    def sig():
        return [layer._cache[0].copy() for layer in selus]
    return sig


def _sample_indices(shape, n, rng):
    size = int(np.prod(shape))
    flat = np.arange(size) if size <= n else rng.choice(size, n, replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def _compare(f, array, analytic, rng, n, signature=None):
    errs = []
    for idx in _sample_indices(array.shape, n, rng):
        errs.append(rel_error(analytic[idx], central_difference(f, array, idx, signature=signature)))
    return errs


def check_layer(layer, store: ParamStore, x: np.ndarray, rng, n_coords: int = 40, seed: int = 0) -> tuple[float, int]:
    """Check input and parameter gradients of ``sum(R * layer(x))``."""
    def f():
        # same seed each call so dropout masks are identical
        return float(np.sum(layer.forward(x, True, np.random.default_rng(seed)) * R))

    R = rng.normal(size=layer.forward(x, True, np.random.default_rng(seed)).shape)
    store.zero_grad()
    gx = layer.backward(R)

    sig = selu_signature([layer])
    errs = _compare(f, x, gx, rng, n_coords, sig)
    for name, p in store.items():
        errs += _compare(f, p, store.grad(name).copy(), rng, n_coords, sig)
    return float(np.max(errs)), len(errs)


def check_softmax_xent(rng) -> tuple[float, int]:
    z = rng.normal(scale=3.0, size=(int(rng.integers(1, 6)), 2))
    y = rng.integers(0, 2, len(z))
    g = softmax_xent_grad(softmax(z), y)
    errs = _compare(lambda: cross_entropy(softmax(z), y), z, g, rng, 20)
    return float(np.max(errs)), len(errs)


def check_classifier(model, x: np.ndarray, y: np.ndarray, rng, n_per_tensor: int = 4, seed: int = 0) -> tuple[float, int]:
    """Sampled parameter coordinates of a full classifier's training loss."""
    model.loss_and_grad(x, y, np.random.default_rng(seed))
    grads = {n: model.params.grad(n).copy() for n in model.params}

    def f():
        return model.loss(x, y, np.random.default_rng(seed))

    sig = selu_signature(list(model.layers()))
    errs = []
    for name, p in model.params.items():
        errs += _compare(f, p, grads[name], rng, n_per_tensor, sig)
    return float(np.max(errs)), len(errs)


def _random_layer_cases(rng):
    B, T = int(rng.integers(1, 4)), int(rng.integers(4, 20))
    c_in, c_out = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    k, d = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    cases = []
    store = ParamStore()
    cases.append(("conv", CausalConv(store, "w", c_in, c_out, k, d, rng), store, rng.normal(size=(B, T, c_in))))
    # two features normalise to +-1 whatever the input, leaving only
    # eps-sized input gradients that finite differences cannot resolve
    c_ln = int(rng.integers(3, 7))
    store = ParamStore()
    ln = LayerNorm(store, "ln", c_ln)
    store.set("ln.gain", rng.normal(size=c_ln))
    store.set("ln.bias", rng.normal(size=c_ln))
    cases.append(("layer_norm", ln, store, rng.normal(scale=2.0, size=(B, T, c_ln))))
    cases.append(("selu", Selu(), ParamStore(), rng.normal(size=(B, T, c_out))))
    cases.append(("dropout", Dropout(float(rng.uniform(0.0, 0.6))), ParamStore(), rng.normal(size=(B, T, c_out))))
    store = ParamStore()
    cases.append(("dense", Dense(store, "fc", c_in, c_out, rng), store, rng.normal(size=(B, c_in))))
    return cases


def _random_tcn(rng):
    k = int(rng.integers(2, 4))
    n_blocks = int(rng.integers(1, 4))
    dilations = tuple(2 ** i for i in range(n_blocks))
    cfg = TcnConfig(window_length=int(rng.integers(8, 24)), dilations=dilations, kernel_size=k,
                    convs_per_block=int(rng.integers(1, 3)), channels=int(rng.integers(3, 8)),
                    dropout_rate=float(rng.choice([0.0, 0.2])), fc_widths=(int(rng.integers(3, 9)), int(rng.integers(3, 9))))
    cfg = replace(cfg, window_length=min(cfg.window_length, receptive_field(cfg)))
    return build(cfg, rng)


def run_suite(seed: int = 0, n_configs: int = 20, include_default: bool = True) -> list[CheckResult]:
    """All layer checks over ``n_configs`` random configurations plus full models."""
    rng = np.random.default_rng(seed)
    worst: dict[str, list] = {}

    def record(name, res):
        e, n = res
        prev = worst.setdefault(name, [0.0, 0])
        prev[0] = max(prev[0], e)
        prev[1] += n

    for i in range(n_configs):
        for name, layer, store, x in _random_layer_cases(rng):
            record(name, check_layer(layer, store, x, rng, seed=seed + i))
        record("softmax_cross_entropy", check_softmax_xent(rng))
        model = _random_tcn(rng)
        x = rng.normal(size=(2,) + model.input_shape)
        record("tcn_random_config", check_classifier(model, x, rng.integers(0, 2, 2), rng, seed=seed + i))
    if include_default:
        for i in range(2):
            model = build(rng=rng)
            x = rng.normal(size=(2, 6, 100))
            record("tcn_default", check_classifier(model, x, np.array([0, 1]), rng, n_per_tensor=3, seed=seed + i))
            fc = build_freq_cnn(FreqCnnConfig(), rng)
            xf = rng.normal(size=(2,) + fc.input_shape)
            record("freq_cnn_default", check_classifier(fc, xf, np.array([1, 0]), rng, n_per_tensor=3, seed=seed + i))
    return [CheckResult(name, e, n) for name, (e, n) in worst.items()]
