"""Frequency-domain comparison detectors.

* a PSD threshold detector: sum the high-frequency Welch PSD of all six
  taxels and compare against a threshold learned on training data;
* a small CNN over per-taxel log-magnitude spectra ("frequency images").
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .nn_core import CausalConv, Dense, Dropout, LayerNorm, Selu
from .tcn import Classifier

FS = 100.0


@dataclass
class PsdConfig:
    segment_length: int = 50
    overlap: float = 0.5
    cutoff_hz: float = 15.0
    threshold: float | None = None

    def validate(self, window_length: int = 100) -> None:
        if not 0.0 < self.cutoff_hz < FS / 2:
            raise ConfigError(f"cutoff_hz must lie in (0, {FS / 2}), got {self.cutoff_hz}")
        if not 2 <= self.segment_length <= window_length:
            raise ConfigError(f"segment_length must be in [2, {window_length}]")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("overlap must be in [0, 1)")


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even form used for spectral analysis)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def welch_psd(signal: np.ndarray, fs: float = FS, config: PsdConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Welch PSD estimate along the last axis.

    Each segment is mean-removed and Hann-windowed; periodograms are
    density-scaled so that ``sum(psd) * df`` approximates the variance.

    Returns
    -------
    freqs : ndarray
        Bin centres in Hz.
    psd : ndarray
        Power per Hz, shape ``signal.shape[:-1] + (len(freqs),)``.
    """
    config = config or PsdConfig()
    x = np.asarray(signal, dtype=np.float64)
    n = config.segment_length
    T = x.shape[-1]
    if T < n:
        raise DataError(f"signal of length {T} is shorter than the segment length {n}")
    step = max(1, int(round(n * (1.0 - config.overlap))))
    starts = np.arange(0, T - n + 1, step)
    segs = np.stack([x[..., s:s + n] for s in starts], axis=-2)
    segs = segs - segs.mean(axis=-1, keepdims=True)
    w = hann(n)
    spec = np.abs(np.fft.rfft(segs * w, axis=-1)) ** 2 / (fs * np.sum(w * w))
    spec[..., 1:] *= 2.0
    if n % 2 == 0:
        spec[..., -1] /= 2.0  # Nyquist bin is not mirrored
    return np.fft.rfftfreq(n, 1.0 / fs), spec.mean(axis=-2)


def psd_score(window: np.ndarray, config: PsdConfig | None = None) -> np.ndarray | float:
    """Summed PSD at or above the cutoff over all channels.

    Accepts a single ``(6, T)`` window (returns a float) or a stack
    ``(N, 6, T)`` (returns ``(N,)``).
    """
    config = config or PsdConfig()
    freqs, psd = welch_psd(window, FS, config)
    score = psd[..., freqs >= config.cutoff_hz].sum(axis=(-1, -2))
    return float(score) if np.ndim(score) == 0 else score


def calibrate_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Threshold maximising balanced accuracy for ``slip = score >= threshold``.

    Candidates are the observed scores; ties resolve to the lowest one.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("threshold calibration needs both classes")
    if np.ptp(scores) == 0:
        raise DataError("all scores are equal; no threshold separates them")
    order = np.argsort(scores, kind="stable")
    s, y = scores[order], labels[order]
    # at candidate s[i], everything from index i upward is called slip
    pos_below = np.concatenate([[0], np.cumsum(y)])
    neg_below = np.concatenate([[0], np.cumsum(1 - y)])
    first = np.flatnonzero(np.concatenate([[True], s[1:] != s[:-1]]))
    tpr = (n_pos - pos_below[first]) / n_pos
    tnr = neg_below[first] / n_neg
    bal = 0.5 * (tpr + tnr)
    best = int(np.argmax(bal))  # argmax returns the first, i.e. lowest, threshold
    return float(s[first[best]])


def balanced_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    pred, labels = np.asarray(pred).astype(int), np.asarray(labels).astype(int)
    tpr = np.mean(pred[labels == 1] == 1)
    tnr = np.mean(pred[labels == 0] == 0)
    return float(0.5 * (tpr + tnr))


class PsdDetector:
    def __init__(self, config: PsdConfig | None = None):
        self.config = config or PsdConfig()
        self.config.validate()

    def fit(self, windows: np.ndarray, labels: np.ndarray) -> "PsdDetector":
        self.config.threshold = calibrate_threshold(psd_score(windows, self.config), labels)
        return self

    def predict(self, windows: np.ndarray) -> np.ndarray:
        if self.config.threshold is None:
            raise ConfigError("PSD detector has no threshold; call fit first")
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None]
        return (psd_score(windows, self.config) >= self.config.threshold).astype(int)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"kind": "psd_threshold", **asdict(self.config)}, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PsdDetector":
        data = json.loads(Path(path).read_text())
        if data.pop("kind", None) != "psd_threshold":
            raise ConfigError(f"{path} is not a PSD threshold file")
        return cls(PsdConfig(**data))


# ---------------------------------------------------------------------------
# Frequency-image CNN
# ---------------------------------------------------------------------------


def freq_image(window: np.ndarray, dft_length: int = 100) -> np.ndarray:
    """Per-taxel ``log(1 + |DFT|)`` with the DC bin removed.

    ``(6, T)`` gives ``(6, dft_length // 2)``; leading batch axes pass through.
    Windows shorter than ``dft_length`` are zero-padded.
    """
    x = np.asarray(window, dtype=np.float64)
    if dft_length < x.shape[-1]:
        raise ConfigError(f"dft_length {dft_length} is shorter than the window ({x.shape[-1]})")
    mag = np.abs(np.fft.rfft(x, n=dft_length, axis=-1))[..., 1:]
    return np.log1p(mag)


@dataclass(frozen=True)
class FreqCnnConfig:
    dft_length: int = 100
    conv_channels: tuple = (16, 16)
    kernel_size: int = 5
    fc_width: int = 32
    dropout_rate: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))

    @property
    def n_bins(self) -> int:
        return self.dft_length // 2

    def validate(self) -> None:
        if self.dft_length < 100:
            raise ConfigError("dft_length must be >= the 100-sample window")
        if not self.conv_channels or min(self.conv_channels) < 1 or self.kernel_size < 1 or self.fc_width < 1:
            raise ConfigError("conv widths, kernel size and fc width must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")


class FreqCnn(Classifier):
    """1-D convolutions along frequency with taxels as channels, then dense layers."""

    kind = "freqcnn"

    def __init__(self, config: FreqCnnConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        self.window_shape = (6, 100)
        self.input_shape = (6, config.n_bins)
        store = self.params
        self.trunk = []
        c = 6
        for i, width in enumerate(config.conv_channels):
            self.trunk += [
                CausalConv(store, f"conv{i}", c, width, config.kernel_size, 1, rng),
                LayerNorm(store, f"ln{i}", width),
                Selu(),
                Dropout(config.dropout_rate),
            ]
            c = width
        self._flat = config.n_bins * c
        self.head = [
            Dense(store, "fc1", self._flat, config.fc_width, rng), Selu(), Dropout(config.dropout_rate),
            Dense(store, "out", config.fc_width, 2, rng),
        ]
        self._pooled_shape = None

    def layers(self):
        yield from self.trunk
        yield from self.head

    def featurize(self, windows):
        return freq_image(windows, self.config.dft_length)

    def _trunk(self, h, training, rng):
        for layer in self.trunk:
            h = layer.forward(h, training, rng)
        return h

    def _trunk_backward(self, g):
        for layer in reversed(self.trunk):
            g = layer.backward(g)
        return g

    def _pool(self, h, training):
        self._pooled_shape = h.shape
        return h.reshape(len(h), -1)

    def _pool_backward(self, g):
        return g.reshape(self._pooled_shape)


def build_freq_cnn(config: FreqCnnConfig | None = None, rng: np.random.Generator | int | None = 0) -> FreqCnn:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return FreqCnn(config or FreqCnnConfig(), rng)
