"""Small differentiable layer library built on numpy.

Activations inside the layers use a ``(batch, time, channels)`` layout so
that every convolution and dense product collapses into a single matrix
multiply.  The free functions at the top operate on the ``(channels, time)``
layout used for individual windows.

All training arithmetic is float64.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StateError

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946
PROB_FLOOR = 1e-12
LAYER_NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# Functional forms
# ---------------------------------------------------------------------------


def check_finite(x: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")


def _kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    c_out, c_in, k = kernel.shape
    return kernel.transpose(2, 1, 0).reshape(k * c_in, c_out)


def dilated_causal_conv1d(x: np.ndarray, kernel: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Causal dilated convolution of a ``(C_in, T)`` signal.

    ``kernel`` has shape ``(C_out, C_in, k)`` and ``kernel[..., j]`` weights
    the input ``j * dilation`` steps in the past.  The input is left-padded
    with zeros so the output keeps length ``T``.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 2 or kernel.ndim != 3:
        raise ShapeError(f"expected input (C, T) and kernel (C_out, C_in, k), got {x.shape} and {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"kernel expects {kernel.shape[1]} input channels, input has {x.shape[0]}")
    if dilation < 1 or kernel.shape[2] < 1:
        raise ConfigError("dilation and kernel size must be >= 1")
    c_in, T = x.shape
    k = kernel.shape[2]
    xp = np.concatenate([np.zeros((1, c_in)), x.T])
    cols = xp[causal_taps(T, k, dilation)].reshape(T, k * c_in)
    return (cols @ _kernel_matrix(kernel)).T


def layer_norm(x: np.ndarray, gain, bias, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalise ``x`` over its last axis, then apply ``gain`` and ``bias``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 1 and eps <= 0:
        raise ConfigError("layer_norm over a single feature needs eps > 0")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    denom = np.sqrt(var + eps)
    xhat = np.divide(x - mu, denom, out=np.zeros_like(x), where=denom > 0)
    return np.asarray(gain) * xhat + np.asarray(bias)


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    neg = SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    return SELU_SCALE * np.where(x > 0, x, neg)


def selu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 for dropped entries, ``1/(1-rate)`` otherwise."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None = None, training: bool = True) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    return x * dropout_mask(np.shape(x), rate, rng)


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``weights`` is ``(M, N)``; ``x`` is ``(..., N)``."""
    return np.asarray(x) @ np.asarray(weights).T + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    # keep probabilities strictly inside (0, 1)
    return np.clip(p, PROB_FLOOR * PROB_FLOOR, 1.0)


def cross_entropy(probs: np.ndarray, label, return_flag: bool = False):
    """Negative log-likelihood of ``label`` with the probability floored at 1e-12.

    Works on a single distribution or a batch (mean over rows).  With
    ``return_flag`` the second value reports whether any probability hit the
    floor.
    """
    probs = np.asarray(probs, dtype=np.float64)
    label = np.asarray(label)
    if probs.ndim == 1:
        picked = probs[label]
    else:
        picked = probs[np.arange(len(probs)), label]
    floored = picked < PROB_FLOOR
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    if return_flag:
        return loss, bool(np.any(floored))
    return loss


def he_normal(shape, rng: np.random.Generator) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


# ---------------------------------------------------------------------------
# Parameters and optimiser
# ---------------------------------------------------------------------------


class ParamStore:
    """Ordered named parameters with parallel gradient buffers."""

    def __init__(self):
        self._params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._grads: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        value = np.ascontiguousarray(value, dtype=np.float64)
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, g: np.ndarray) -> None:
        self._grads[name] += g

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def set(self, name: str, value: np.ndarray) -> None:
        """Overwrite a parameter in place, keeping the array identity."""
        target = self._params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != target.shape:
            raise ShapeError(f"{name}: expected shape {target.shape}, got {value.shape}")
        target[...] = value

    def num_values(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._params.values()])


@dataclass
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """Bias-corrected Adam update applied in place to every parameter."""
    if state.t > 0 and (not state.m or not state.v):
        raise StateError(f"Adam state at step {state.t} has no moment estimates")
    if state.t == 0:
        state.m = {n: np.zeros_like(p) for n, p in params.items()}
        state.v = {n: np.zeros_like(p) for n, p in params.items()}
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = params.grad(name)
        m = state.m[name]
        v = state.v[name]
        if m.shape != p.shape or v.shape != p.shape:
            raise StateError(f"Adam moments for {name} do not match parameter shape")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    """Forward caches what backward needs; backward adds parameter gradients."""

    _cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        cache, self._cache = self._cache, None
        return cache


def causal_taps(n: int, k: int, dilation: int) -> np.ndarray:
    """Gather table for a full-length causal convolution.

    Row ``t`` lists, for each tap ``j``, the position of input ``t - j*dilation``
    in a sequence with one zero step prepended (position 0 is the padding).
    """
    t = np.arange(n)[:, None] - np.arange(k)[None, :] * dilation
    return np.where(t >= 0, t + 1, 0)


class CausalConv(Layer):
    """Bias-free dilated causal convolution over ``(B, T, C)`` activations.

    ``taps`` (see :func:`causal_taps`) lets the caller evaluate the layer on
    an arbitrary subset of output steps whose inputs are stored sparsely.
    """

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, k: int, dilation: int,
                 rng: np.random.Generator):
        if k < 1 or dilation < 1:
            raise ConfigError("kernel size and dilation must be >= 1")
        self.store, self.name = store, name
        self.c_in, self.c_out, self.k, self.dilation = c_in, c_out, k, dilation
        store.add(name, he_normal((c_out, c_in, k), rng))

    def forward(self, x: np.ndarray, training: bool = False, rng=None, taps: np.ndarray | None = None) -> np.ndarray:
        B, n_in, C = x.shape
        if C != self.c_in:
            raise ShapeError(f"{self.name}: expected {self.c_in} channels, got {C}")
        if taps is None:
            taps = causal_taps(n_in, self.k, self.dilation)
        n_out = len(taps)
        xp = np.empty((B, n_in + 1, C))
        xp[:, 0] = 0.0
        xp[:, 1:] = x
        cols = xp[:, taps].reshape(B * n_out, self.k * C)
        wm = _kernel_matrix(self.store[self.name])
        if training:
            self._cache = (cols, wm, taps, x.shape)
        return (cols @ wm).reshape(B, n_out, self.c_out)

    def backward(self, g: np.ndarray) -> np.ndarray:
        cols, wm, taps, (B, n_in, C) = self._take_cache()
        n_out = len(taps)
        g2 = g.reshape(B * n_out, self.c_out)
        gw = (cols.T @ g2).reshape(self.k, C, self.c_out).transpose(2, 1, 0)
        self.store.accumulate(self.name, gw)
        gcols = (g2 @ wm.T).reshape(B, n_out, self.k, C)
        gxp = np.zeros((B, n_in + 1, C))
        for j in range(self.k):
            # valid positions are unique per tap; duplicates only hit the pad slot
            gxp[:, taps[:, j]] += gcols[:, :, j]
        return gxp[:, 1:]


class LayerNorm(Layer):
    def __init__(self, store: ParamStore, name: str, c: int, eps: float = LAYER_NORM_EPS):
        if eps <= 0:
            raise ConfigError("layer norm eps must be > 0")
        self.store, self.name, self.eps = store, name, eps
        store.add(name + ".gain", np.ones(c))
        store.add(name + ".bias", np.zeros(c))

    def forward(self, x, training=False, rng=None):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        if training:
            self._cache = (xhat, inv)
        return self.store[self.name + ".gain"] * xhat + self.store[self.name + ".bias"]

    def backward(self, g):
        xhat, inv = self._take_cache()
        axes = tuple(range(g.ndim - 1))
        self.store.accumulate(self.name + ".gain", np.sum(g * xhat, axis=axes))
        self.store.accumulate(self.name + ".bias", np.sum(g, axis=axes))
        gh = g * self.store[self.name + ".gain"]
        return inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * np.mean(gh * xhat, axis=-1, keepdims=True))


class Selu(Layer):
    def forward(self, x, training=False, rng=None):
        y = np.expm1(np.minimum(x, 0.0))
        y *= SELU_ALPHA
        y += np.maximum(x, 0.0)
        y *= SELU_SCALE
        if training:
            self._cache = (x > 0, y)
        return y

    def backward(self, g):
        pos, y = self._take_cache()
        # for x <= 0 the derivative equals y + scale * alpha
        return g * np.where(pos, SELU_SCALE, y + SELU_SCALE * SELU_ALPHA)


class Dropout(Layer):
    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training:
            return x
        if self.rate == 0.0:
            self._cache = 1.0
            return x
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        mask = dropout_mask(x.shape, self.rate, rng)
        self._cache = mask
        return x * mask

    def backward(self, g):
        return g * self._take_cache()


class Dense(Layer):
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.store, self.name = store, name
        self.n_in, self.n_out = n_in, n_out
        store.add(name + ".weight", he_normal((n_out, n_in), rng))
        store.add(name + ".bias", np.zeros(n_out))

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name}: expected {self.n_in} features, got {x.shape[-1]}")
        if training:
            self._cache = x
        return x @ self.store[self.name + ".weight"].T + self.store[self.name + ".bias"]

    def backward(self, g):
        x = self._take_cache()
        x2 = x.reshape(-1, self.n_in)
        g2 = g.reshape(-1, self.n_out)
        self.store.accumulate(self.name + ".weight", g2.T @ x2)
        self.store.accumulate(self.name + ".bias", g2.sum(axis=0))
        return g @ self.store[self.name + ".weight"]


def softmax_xent_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean cross-entropy with respect to the logits."""
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)
