"""End-to-end steps shared by the command line and the experiment harness."""

from __future__ import annotations

import csv
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checkpoint, metrics, plotting
from .baselines import FreqCnnConfig, PsdDetector, build_freq_cnn
from .data import Dataset, WindowSet, build_dataset, load_recordings, windows_from_recordings
from .tcn import TcnConfig, build
from .train import EpochMetrics, Schedule, train

MODEL_KINDS = ("tcn", "freqcnn")


def load_corpus(directory, stride: int = 5) -> WindowSet:
    """Read every recording in ``directory`` and cut labelled raw windows."""
    return windows_from_recordings(load_recordings(directory), stride=stride)


def make_dataset(windows: WindowSet, seed: int, val_fraction: float = 0.1) -> Dataset:
    return build_dataset(windows, np.random.default_rng(np.random.SeedSequence([seed, 101])), val_fraction)


def new_model(kind: str, seed: int, config=None):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    if kind == "tcn":
        return build(config or TcnConfig(), rng)
    if kind == "freqcnn":
        return build_freq_cnn(config or FreqCnnConfig(), rng)
    raise ValueError(f"unknown model kind {kind!r}")


def fit(kind: str, dataset: Dataset, schedule: Schedule, config=None, callback=None):
    """Build and train a classifier; returns ``(model, history)``."""
    model = new_model(kind, schedule.seed, config)
    history = train(model, dataset, schedule, callback)
    return model, history


def fit_psd(dataset: Dataset) -> PsdDetector:
    """Calibrate the PSD threshold on raw (un-normalised) training windows."""
    raw = dataset.train.x * dataset.std[:, None] + dataset.mean[:, None]
    return PsdDetector().fit(raw, dataset.train.y)


def predict(model, windows: WindowSet) -> np.ndarray:
    """Class predictions for raw windows; ``model`` may be a classifier,
    a :class:`PsdDetector` or ``None`` (always static)."""
    if model is None:
        return np.zeros(len(windows), dtype=np.int64)
    if isinstance(model, PsdDetector):
        return model.predict(windows.x)
    return model.predict(model.normalize(windows.x))


def write_history(history: list[EpochMetrics], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for h in history:
            w.writerow([h.epoch] + [f"{getattr(h, k):.6f}" for k in ("train_loss", "train_acc", "val_loss", "val_acc")])
    return path


def write_reports(preds, windows: WindowSet, out_dir, name: str = "eval", plots: bool = True) -> dict:
    """Write metrics and breakdown tables (CSV + markdown) and optional figures.

    Returns a dict with the reports and the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = metrics.evaluate(preds, windows.y)
    paths = {}
    for fmt, ext in (("csv", "csv"), ("markdown", "md")):
        p = out_dir / f"{name}_metrics.{ext}"
        p.write_text(metrics.render(report, fmt))
        paths[f"metrics_{ext}"] = p
    result = {"metrics": report, "paths": paths}
    try:
        bd = metrics.breakdown(preds, windows.y, windows)
    except Exception:  # pragma: no cover - breakdown needs motion meta
        bd = None
    if bd is not None and bd.rows:
        for fmt, ext in (("csv", "csv"), ("markdown", "md")):
            p = out_dir / f"{name}_breakdown.{ext}"
            p.write_text(metrics.render(bd, fmt))
            paths[f"breakdown_{ext}"] = p
        result["breakdown"] = bd
        if plots:
            paths["breakdown_png"] = plotting.breakdown_heatmap(bd, out_dir / f"{name}_breakdown.png")
    if plots:
        paths["confusion_png"] = plotting.confusion_matrix(report.confusion, out_dir / f"{name}_confusion.png", name)
    return result


def save_model(model, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, PsdDetector):
        model.save(path)
    else:
        checkpoint.save(model, path)


def load_model(path):
    """Load a classifier checkpoint or a PSD threshold file."""
    head = Path(path).read_bytes()[:4]
    if head in checkpoint.MAGIC.values():
        return checkpoint.load(path)
    return PsdDetector.load(path)


def schedule_dict(schedule: Schedule) -> dict:
    return asdict(schedule)
