"""Online slip detection over a live 100 Hz pressure stream.

A frame is classified as soon as the ring buffer holds a full window.  Slip
events open on the second consecutive slip label and close on the second
consecutive static label; both transitions carry the timestamp of the
confirming classification.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import PRESSURE_HEADER
from .errors import DataError

log = logging.getLogger(__name__)

STATIC, SLIP = 0, 1


class OutOfOrderError(DataError):
    """A frame's timestamp does not exceed the previous one."""


@dataclass
class SlipEvent:
    onset_ns: int
    peak_p_slip: float
    offset_ns: int | None = None


class Debouncer:
    """Symmetric N-step debounce over a label stream."""

    def __init__(self, steps: int = 2):
        if steps < 1:
            raise ValueError("debounce needs at least one step")
        self.steps = steps
        self.consecutive_slip = 0
        self.consecutive_static = 0
        self.active: SlipEvent | None = None
        self._run_peak = 0.0

    def step(self, label: int, p_slip: float, t_ns: int) -> dict | None:
        """Feed one classification; return an ``open``/``close`` record or None."""
        if label == SLIP:
            self._run_peak = p_slip if self.consecutive_slip == 0 else max(self._run_peak, p_slip)
            self.consecutive_slip += 1
            self.consecutive_static = 0
            if self.active is not None:
                self.active.peak_p_slip = max(self.active.peak_p_slip, p_slip)
            elif self.consecutive_slip >= self.steps:
                self.active = SlipEvent(int(t_ns), self._run_peak)
                return {"type": "open", "t_ns": int(t_ns), "peak_p_slip": self._run_peak}
            return None
        self.consecutive_slip = 0
        self.consecutive_static += 1
        if self.active is not None and self.consecutive_static >= self.steps:
            ev, self.active = self.active, None
            ev.offset_ns = int(t_ns)
            return {"type": "close", "t_ns": int(t_ns), "peak_p_slip": ev.peak_p_slip}
        return None


def debounce(labels, p_slip=None, t_ns=None, steps: int = 2) -> list[dict]:
    """Run :class:`Debouncer` over whole sequences (``t_ns`` defaults to the index)."""
    labels = np.asarray(labels).astype(int)
    p_slip = labels.astype(float) if p_slip is None else np.asarray(p_slip, dtype=float)
    t_ns = np.arange(len(labels)) if t_ns is None else np.asarray(t_ns)
    d = Debouncer(steps)
    out = []
    for lab, p, t in zip(labels, p_slip, t_ns):
        rec = d.step(int(lab), float(p), int(t))
        if rec is not None:
            out.append(rec)
    return out


class StreamingDetector:
    """Ring-buffered window classifier with debounced event output.

    Parameters
    ----------
    model : Classifier
        Frozen model; its stored normalisation stats are applied to raw frames.
    steps : int
        Consecutive agreeing labels needed to open or close an event.
    """

    def __init__(self, model, steps: int = 2):
        self.model = model
        self.length = model.window_shape[1]
        self.channels = model.window_shape[0]
        self._ring = np.zeros((self.length, self.channels))
        self._window = np.empty((self.channels, self.length))
        self._head = 0          # next write slot
        self.filled = 0
        self.last_t: int | None = None
        self.debouncer = Debouncer(steps)

    @property
    def consecutive_slip(self) -> int:
        return self.debouncer.consecutive_slip

    @property
    def active_event(self) -> SlipEvent | None:
        return self.debouncer.active

    def _current_window(self) -> np.ndarray:
        # oldest frame sits at the write head once the ring is full
        k = self.length - self._head
        self._window[:, :k] = self._ring[self._head:].T
        self._window[:, k:] = self._ring[:self._head].T
        return self._window

    def classify_current(self) -> np.ndarray | None:
        """Class probabilities for the buffered window, or None while warming up."""
        if self.filled < self.length:
            return None
        return self.model.forward(self.model.normalize(self._current_window()))

    def push(self, t_ns: int, pressure) -> tuple[np.ndarray | None, dict | None]:
        """Ingest one frame; returns ``(probabilities or None, transition or None)``."""
        t_ns = int(t_ns)
        if self.last_t is not None and t_ns <= self.last_t:
            raise OutOfOrderError(f"frame at t_ns={t_ns} does not follow t_ns={self.last_t}")
        p = np.asarray(pressure, dtype=np.float64)
        if p.shape != (self.channels,):
            raise DataError(f"expected {self.channels} pressure values, got shape {p.shape}")
        self._ring[self._head] = p
        self._head = (self._head + 1) % self.length
        self.filled = min(self.filled + 1, self.length)
        self.last_t = t_ns
        probs = self.classify_current()
        if probs is None:
            return None, None
        label = int(np.argmax(probs))
        return probs, self.debouncer.step(label, float(probs[SLIP]), t_ns)


def offline_probabilities(model, pressure: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Batch probabilities for every full window of a ``(N, 6)`` log; row i ends at frame i + 99."""
    pressure = np.asarray(pressure, dtype=np.float64)
    length = model.window_shape[1]
    if len(pressure) < length:
        return np.zeros((0, 2))
    windows = np.lib.stride_tricks.sliding_window_view(pressure, length, axis=0)
    return model.predict_proba(model.normalize(windows), batch_size=batch_size)


@dataclass
class DetectStats:
    rows: int = 0
    malformed: int = 0
    classified: int = 0
    events: int = 0


def _parse_row(line: str, channels: int) -> tuple[int, np.ndarray]:
    parts = line.strip().split(",")
    if len(parts) != channels + 1:
        raise ValueError(f"expected {channels + 1} fields, got {len(parts)}")
    t = int(parts[0])
    p = np.array([float(v) for v in parts[1:]])
    if not all(math.isfinite(v) for v in p):
        raise ValueError("non-finite pressure value")
    return t, p


def run_detect(lines, model, sink, max_malformed: float = 0.01, steps: int = 2) -> DetectStats:
    """Stream CSV frames from ``lines`` and write JSON-lines transitions to ``sink``.

    Malformed or out-of-order rows are skipped and counted.  Raises
    :class:`DataError` once skipped rows exceed ``max_malformed`` of the
    rows read (checked after every 1000 rows and at the end).
    """
    det = StreamingDetector(model, steps)
    stats = DetectStats()
    header = ",".join(PRESSURE_HEADER)

    def check():
        if stats.rows and stats.malformed > max_malformed * stats.rows:
            raise DataError(f"{stats.malformed} of {stats.rows} rows malformed (limit {max_malformed:.0%})")

    for i, line in enumerate(lines):
        if not line.strip() or (i == 0 and line.strip() == header):
            continue
        stats.rows += 1
        try:
            t, p = _parse_row(line, det.channels)
            probs, rec = det.push(t, p)
        except (ValueError, DataError) as exc:
            stats.malformed += 1
            log.warning("skipping row %d: %s", i + 1, exc)
            probs, rec = None, None
        if probs is not None:
            stats.classified += 1
        if rec is not None:
            stats.events += 1
            sink.write(json.dumps(rec) + "\n")
        if stats.rows % 1000 == 0:
            check()
    check()
    return stats


def events_from_log(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def intervals(events: list[dict], end_ns: int | None = None) -> list[tuple[int, int]]:
    """Pair open/close records into ``(onset, offset)``; a trailing open runs to ``end_ns``."""
    out, onset = [], None
    for ev in events:
        if ev["type"] == "open":
            onset = ev["t_ns"]
        elif onset is not None:
            out.append((onset, ev["t_ns"]))
            onset = None
    if onset is not None and end_ns is not None:
        out.append((onset, end_ns))
    return out
