"""Temporal convolutional slip classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
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

STATIC, SLIP = 0, 1


@dataclass(frozen=True)
class TcnConfig:
    input_channels: int = 6
    window_length: int = 100
    dilations: tuple = (1, 2, 4, 8, 16)
    kernel_size: int = 3
    convs_per_block: int = 2
    channels: int = 32
    dropout_rate: float = 0.2
    fc_widths: tuple = (64, 32)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))

    def validate(self) -> None:
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ConfigError("dilations must be positive integers")
        if any(b <= a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ConfigError(f"dilations must be strictly increasing, got {self.dilations}")
        if self.kernel_size < 1 or self.convs_per_block < 1 or self.channels < 1:
            raise ConfigError("kernel_size, convs_per_block and channels must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if len(self.fc_widths) != 2 or min(self.fc_widths) < 1:
            raise ConfigError("fc_widths must be two positive integers")
        rf = receptive_field(self)
        if rf < self.window_length:
            raise ConfigError(
                f"receptive field {rf} is shorter than the window length {self.window_length}")


def receptive_field(config: TcnConfig) -> int:
    """Number of input steps visible to the last output step."""
    return 1 + sum(config.convs_per_block * (config.kernel_size - 1) * d for d in config.dilations)


class Classifier:
    """Shared machinery for the two convolutional classifiers.

    Subclasses provide the trunk (applied to ``(B, T, C)`` sequences), a
    pooling step and ``self.head``, the layers applied after pooling.
    ``logits`` and ``loss_and_grad`` take featurised inputs; the
    ``predict*`` methods take normalised windows.
    """

    kind = "base"
    input_shape: tuple
    window_shape: tuple = (6, 100)

    def __init__(self):
        self.params = ParamStore()
        self.trained = False
        self.norm_mean = np.zeros(6)
        self.norm_std = np.ones(6)

    # -- plumbing ---------------------------------------------------------
    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input of shape (N, {self.input_shape[0]}, {self.input_shape[1]}), "
                             f"got {x.shape}")
        return x

    def layers(self):
        """Every layer object, in forward order."""
        raise NotImplementedError

    def _trunk(self, h, training, rng):
        return h

    def _trunk_backward(self, g):
        return g

    def _pool(self, h, training):
        raise NotImplementedError

    def _pool_backward(self, g):
        raise NotImplementedError

    def logits(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        x = self._check_batch(x)
        h = self._trunk(np.ascontiguousarray(x.transpose(0, 2, 1)), training, rng)
        h = self._pool(h, training)
        for layer in self.head:
            h = layer.forward(h, training, rng)
        return h

    def backward(self, g: np.ndarray) -> None:
        for layer in reversed(self.head):
            g = layer.backward(g)
        g = self._pool_backward(g)
        self._trunk_backward(g)

    # -- public -----------------------------------------------------------
    def featurize(self, windows: np.ndarray) -> np.ndarray:
        """Map normalised ``(N, 6, T)`` windows to network inputs."""
        return np.asarray(windows, dtype=np.float64)

    def _check_windows(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None]
        if windows.shape[1:] != self.window_shape:
            raise ShapeError(f"expected windows of shape (N, {self.window_shape[0]}, {self.window_shape[1]}), "
                             f"got {windows.shape}")
        return windows

    def predict_proba(self, windows: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Inference-mode class probabilities ``(N, 2)`` for normalised windows."""
        windows = self._check_windows(windows)
        out = [softmax(self.logits(self.featurize(windows[i:i + batch_size])))
               for i in range(0, len(windows), batch_size)]
        if not out:
            return np.zeros((0, 2))
        return np.concatenate(out)

    def forward(self, window: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        """Probability vector over (static, slip) for a single window."""
        window = np.asarray(window, dtype=np.float64)
        if window.shape != self.window_shape:
            raise ShapeError(f"expected window of shape {self.window_shape}, got {window.shape}")
        return softmax(self.logits(self.featurize(window[None]), training, rng))[0]

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(windows), axis=1)

    def loss(self, x: np.ndarray, y: np.ndarray, rng=None) -> float:
        """Training-mode batch-mean cross-entropy, without gradients."""
        return cross_entropy(softmax(self.logits(x, training=True, rng=rng)), y)

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray, rng=None) -> tuple[float, np.ndarray]:
        """Mean cross-entropy over the batch; gradients land in ``self.params``."""
        self.params.zero_grad()
        p = softmax(self.logits(x, training=True, rng=rng))
        loss = cross_entropy(p, y)
        self.backward(softmax_xent_grad(p, np.asarray(y)))
        return loss, p

    def set_normalization(self, mean, std) -> None:
        self.norm_mean = np.asarray(mean, dtype=np.float64).copy()
        self.norm_std = np.asarray(std, dtype=np.float64).copy()

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        """Apply the stored per-channel stats to raw ``(..., 6, T)`` windows."""
        raw = np.asarray(raw, dtype=np.float64)
        return (raw - self.norm_mean[:, None]) / np.maximum(self.norm_std, 1e-9)[:, None]


def _lookback(times: np.ndarray, k: int, dilation: int) -> np.ndarray:
    """Input steps read by a causal conv evaluated at ``times``."""
    t = (times[:, None] - np.arange(k)[None, :] * dilation).ravel()
    return np.unique(t[t >= 0])


def _taps(in_times: np.ndarray, out_times: np.ndarray, k: int, dilation: int) -> np.ndarray:
    t = out_times[:, None] - np.arange(k)[None, :] * dilation
    pos = np.searchsorted(in_times, np.maximum(t, 0)) + 1
    return np.where(t >= 0, pos, 0)


class ResidualBlock:
    """``n_convs`` x (causal conv, layer norm, SELU, dropout) plus a skip path."""

    def __init__(self, store, name, c_in, c_out, k, dilation, n_convs, rate, rng):
        self.k, self.dilation = k, dilation
        self.stages = []
        c = c_in
        for i in range(n_convs):
            self.stages.append([
                CausalConv(store, f"{name}.conv{i}", c, c_out, k, dilation, rng),
                LayerNorm(store, f"{name}.ln{i}", c_out),
                Selu(),
                Dropout(rate),
            ])
            c = c_out
        self.proj = CausalConv(store, f"{name}.proj", c_in, c_out, 1, 1, rng) if c_in != c_out else None
        self.out_act = Selu()

    def layers(self):
        for stage in self.stages:
            yield from stage
        if self.proj is not None:
            yield self.proj
        yield self.out_act

    def plan(self, out_times: np.ndarray) -> tuple[np.ndarray, dict]:
        """Work back from the requested output steps to the needed input steps."""
        times = [out_times]
        for _ in self.stages:
            times.insert(0, _lookback(times[0], self.k, self.dilation))
        taps = [_taps(a, b, self.k, self.dilation) for a, b in zip(times, times[1:])]
        skip = np.searchsorted(times[0], out_times)
        return times[0], {"taps": taps, "skip": skip, "n_in": len(times[0])}

    def forward(self, x, training, rng, plan):
        h = x
        for stage, taps in zip(self.stages, plan["taps"]):
            h = stage[0].forward(h, training, rng, taps=taps)
            for layer in stage[1:]:
                h = layer.forward(h, training, rng)
        res = x[:, plan["skip"]]
        if self.proj is not None:
            res = self.proj.forward(res, training)
        if training:
            self._plan = plan
        return self.out_act.forward(h + res, training)

    def backward(self, g):
        plan = self._plan
        g = self.out_act.backward(g)
        g_res = self.proj.backward(g) if self.proj is not None else g
        for stage in reversed(self.stages):
            for layer in reversed(stage):
                g = layer.backward(g)
        g[:, plan["skip"]] += g_res
        return g


class TcnModel(Classifier):
    """Dilated causal residual blocks, two dense layers and a 2-way softmax.

    The head reads the features of the final time step only, so by default
    each layer is evaluated just on the steps inside that step's receptive
    cone.  :meth:`sequence_logits` evaluates every step.
    """

    kind = "tcn"

    def __init__(self, config: TcnConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        self.input_shape = (config.input_channels, config.window_length)
        self.window_shape = self.input_shape
        self.norm_mean = np.zeros(config.input_channels)
        self.norm_std = np.ones(config.input_channels)
        store = self.params
        self.blocks = []
        c = config.input_channels
        for i, d in enumerate(config.dilations):
            self.blocks.append(ResidualBlock(store, f"block{i}", c, config.channels, config.kernel_size, d,
                                             config.convs_per_block, config.dropout_rate, rng))
            c = config.channels
        w1, w2 = config.fc_widths
        self.head = [
            Dense(store, "fc1", c, w1, rng), Selu(), Dropout(config.dropout_rate),
            Dense(store, "fc2", w1, w2, rng), Selu(), Dropout(config.dropout_rate),
            Dense(store, "out", w2, config.num_classes, rng),
        ]
        T = config.window_length
        self._last_plan = self._make_plan(np.array([T - 1]))
        self._full_plan = self._make_plan(np.arange(T))
        self._n_in = None

    def layers(self):
        for block in self.blocks:
            yield from block.layers()
        yield from self.head

    def _make_plan(self, out_times):
        plans = []
        times = out_times
        for block in reversed(self.blocks):
            times, p = block.plan(times)
            plans.insert(0, p)
        return times, plans

    def _run_trunk(self, x, training, rng, plan):
        in_times, plans = plan
        h = x[:, in_times]
        for block, p in zip(self.blocks, plans):
            h = block.forward(h, training, rng, p)
        return h

    def _trunk(self, h, training, rng):
        self._n_in = h.shape
        return self._run_trunk(h, training, rng, self._last_plan)

    def _trunk_backward(self, g):
        for block in reversed(self.blocks):
            g = block.backward(g)
        return g

    def _pool(self, h, training):
        return h[:, -1, :]

    def _pool_backward(self, g):
        return g[:, None, :]

    def sequence_logits(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode logits for every time step, ``(N, T, classes)``."""
        x = self._check_batch(x)
        h = self._run_trunk(np.ascontiguousarray(x.transpose(0, 2, 1)), False, None, self._full_plan)
        for layer in self.head:
            h = layer.forward(h, False, None)
        return h


def build(config: TcnConfig | None = None, rng: np.random.Generator | int | None = 0) -> TcnModel:
    """He-normal initialised model; biases zero, layer-norm gains one."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return TcnModel(config or TcnConfig(), rng)
