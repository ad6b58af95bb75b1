"""Sensor logs to labelled, normalised, augmented 6x100 windows.

Grid convention for the 2x3 barometer array: row ``r`` in {0, 1} runs along
the y axis, column ``c`` in {0, 1, 2} along the x axis, and channel index is
``3 * r + c``.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

NOMINAL_PERIOD_NS = 10_000_000
WINDOW = 100
STATIC, SLIP = 0, 1

CURVATURES = ("planar", "spherical", "cyl_x", "cyl_y")
MOTIONS = ("static", "translation", "rotation")

# channel permutations of the grid symmetries
X_FLIP = np.array([2, 1, 0, 5, 4, 3])
Y_FLIP = np.array([3, 4, 5, 0, 1, 2])
ROT180 = np.array([5, 4, 3, 2, 1, 0])
TRANSFORMS = {"x_flip": X_FLIP, "y_flip": Y_FLIP, "rot180": ROT180}

PRESSURE_HEADER = ["t_ns", "p0", "p1", "p2", "p3", "p4", "p5"]
VELOCITY_HEADER = ["t_ns", "vx", "vy", "omega"]


@dataclass
class Recording:
    """One synchronised-able pair of logs plus the condition annotation."""

    source_id: str
    t_ns: np.ndarray              # (N,) int64
    pressure: np.ndarray          # (N, 6)
    vel_t_ns: np.ndarray          # (M,) int64
    velocity: np.ndarray          # (M, 2) m/s
    omega: np.ndarray             # (M,) rad/s
    annotation: dict = field(default_factory=dict)

    @property
    def gap_flag(self) -> bool:
        """True when any frame gap exceeds three nominal periods."""
        return bool(len(self.t_ns) > 1 and np.max(np.diff(self.t_ns)) > 3 * NOMINAL_PERIOD_NS)


@dataclass
class Synced:
    t_ns: np.ndarray
    pressure: np.ndarray
    velocity: np.ndarray
    omega: np.ndarray


@dataclass
class LabeledWindow:
    x: np.ndarray
    label: int
    meta: dict


@dataclass
class WindowSet:
    """Stacked windows with per-window metadata columns."""

    x: np.ndarray                  # (N, 6, 100)
    y: np.ndarray                  # (N,) 0 static / 1 slip
    speed: np.ndarray              # (N,) m/s, 0 when not translating
    direction: np.ndarray          # (N,) degrees, -1 when undefined
    curvature: np.ndarray          # (N,) index into CURVATURES
    motion: np.ndarray             # (N,) index into MOTIONS
    source: np.ndarray             # (N,) recording index
    t_end_ns: np.ndarray           # (N,) timestamp of the final frame
    sources: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> LabeledWindow:
        return LabeledWindow(self.x[i], int(self.y[i]), self.meta(i))

    def meta(self, i: int) -> dict:
        return {
            "speed": float(self.speed[i]),
            "direction": float(self.direction[i]),
            "curvature": CURVATURES[self.curvature[i]],
            "motion": MOTIONS[self.motion[i]],
            "source_id": self.sources[self.source[i]] if self.sources else str(self.source[i]),
        }

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.x[idx], self.y[idx], self.speed[idx], self.direction[idx], self.curvature[idx],
                         self.motion[idx], self.source[idx], self.t_end_ns[idx], list(self.sources))

    def with_x(self, x: np.ndarray) -> "WindowSet":
        return WindowSet(x, self.y, self.speed, self.direction, self.curvature, self.motion, self.source,
                         self.t_end_ns, list(self.sources))

    @staticmethod
    def concat(sets: list["WindowSet"]) -> "WindowSet":
        sources: list = []
        parts = []
        for s in sets:
            offset = len(sources)
            sources += list(s.sources)
            parts.append((s, offset))
        if not parts:
            return empty_windows()
        cat = lambda attr: np.concatenate([getattr(s, attr) for s, _ in parts])  # noqa: E731
        return WindowSet(cat("x"), cat("y"), cat("speed"), cat("direction"), cat("curvature"), cat("motion"),
                         np.concatenate([s.source + off for s, off in parts]), cat("t_end_ns"), sources)


def empty_windows() -> WindowSet:
    z = np.zeros(0)
    zi = np.zeros(0, dtype=np.int64)
    return WindowSet(np.zeros((0, 6, WINDOW)), zi, z, z, zi, zi, zi, zi, [])


@dataclass
class Dataset:
    train: WindowSet
    val: WindowSet
    mean: np.ndarray
    std: np.ndarray


# ---------------------------------------------------------------------------
# Log IO
# ---------------------------------------------------------------------------


def write_recording(rec: Recording, directory) -> Path:
    """Write ``<id>.pressure.csv``, ``<id>.velocity.csv`` and ``<id>.meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = directory / rec.source_id
    with open(f"{base}.pressure.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRESSURE_HEADER)
        for t, p in zip(rec.t_ns, rec.pressure):
            w.writerow([int(t)] + [repr(float(v)) for v in p])
    with open(f"{base}.velocity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VELOCITY_HEADER)
        for t, v, om in zip(rec.vel_t_ns, rec.velocity, rec.omega):
            w.writerow([int(t), repr(float(v[0])), repr(float(v[1])), repr(float(om))])
    Path(f"{base}.meta.json").write_text(json.dumps(rec.annotation, indent=2, sort_keys=True) + "\n")
    return base


def read_pressure_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PRESSURE_HEADER:
            raise DataError(f"{path}: expected header {','.join(PRESSURE_HEADER)}")
        rows = [r for r in reader if r]
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 6))
    t = np.array([int(r[0]) for r in rows], dtype=np.int64)
    p = np.array([[float(v) for v in r[1:7]] for r in rows])
    return t, p


def read_velocity_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != VELOCITY_HEADER:
            raise DataError(f"{path}: expected header {','.join(VELOCITY_HEADER)}")
        rows = [r for r in reader if r]
    t = np.array([int(r[0]) for r in rows], dtype=np.int64)
    v = np.array([[float(r[1]), float(r[2])] for r in rows]).reshape(-1, 2)
    om = np.array([float(r[3]) if len(r) > 3 and r[3] != "" else 0.0 for r in rows])
    return t, v, om


def read_recording(base) -> Recording:
    """Load a recording given its path prefix (``dir/<id>``)."""
    base = str(base)
    t, p = read_pressure_csv(base + ".pressure.csv")
    vt, v, om = read_velocity_csv(base + ".velocity.csv")
    meta_path = Path(base + ".meta.json")
    annotation = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Recording(Path(base).name, t, p, vt, v, om, annotation)


def list_recordings(directory) -> list[Path]:
    directory = Path(directory)
    bases = sorted(p.with_name(p.name[: -len(".pressure.csv")]) for p in directory.glob("*.pressure.csv"))
    if not bases:
        raise DataError(f"no *.pressure.csv logs in {directory}")
    return bases


def load_recordings(directory) -> list[Recording]:
    return [read_recording(b) for b in list_recordings(directory)]


# ---------------------------------------------------------------------------
# Synchronisation and labelling
# ---------------------------------------------------------------------------


def synchronize(rec: Recording) -> Synced:
    """Pair each pressure frame with the velocity interpolated at its timestamp.

    Frames outside the velocity log's time span are dropped.
    """
    t, vt = rec.t_ns, rec.vel_t_ns
    if len(t) == 0 or len(vt) == 0:
        raise DataError(f"{rec.source_id}: empty pressure or velocity log")
    if np.any(np.diff(t) <= 0) or np.any(np.diff(vt) < 0):
        raise DataError(f"{rec.source_id}: timestamps are not sorted")
    keep = (t >= vt[0]) & (t <= vt[-1])
    if not np.any(keep):
        raise DataError(f"{rec.source_id}: pressure log [{t[0]}, {t[-1]}] ns does not overlap "
                        f"velocity log [{vt[0]}, {vt[-1]}] ns")
    tk = t[keep]
    # interpolate relative to the first velocity stamp to keep float precision
    x = (tk - vt[0]).astype(np.float64)
    xp = (vt - vt[0]).astype(np.float64)
    v = np.column_stack([np.interp(x, xp, rec.velocity[:, i]) for i in range(2)])
    om = np.interp(x, xp, rec.omega)
    return Synced(tk, rec.pressure[keep], v, om)


def surface_speed(velocity: np.ndarray, omega: np.ndarray | None = None, r_eff: float = 0.02) -> np.ndarray:
    speed = np.hypot(velocity[:, 0], velocity[:, 1])
    if omega is not None:
        speed = speed + r_eff * np.abs(omega)
    return speed


def label_frames(speed: np.ndarray, v_slip: float = 0.01, v_static: float = 0.005) -> np.ndarray:
    """Hysteresis labelling: slip at or above ``v_slip``, static at or below
    ``v_static``, previous label in between (static before any decision)."""
    if not 0.0 < v_static < v_slip:
        raise DataError(f"need 0 < v_static < v_slip, got {v_static}, {v_slip}")
    labels = np.empty(len(speed), dtype=np.int64)
    state = STATIC
    for i, s in enumerate(speed):
        if s >= v_slip:
            state = SLIP
        elif s <= v_static:
            state = STATIC
        labels[i] = state
    return labels


def _annotation_codes(annotation: dict) -> tuple[float, float, int, int]:
    motion = annotation.get("motion", "static")
    curvature = annotation.get("curvature", "planar")
    if motion not in MOTIONS or curvature not in CURVATURES:
        raise DataError(f"unknown motion/curvature in annotation {annotation}")
    speed = float(annotation.get("speed_mps", 0.0) or 0.0)
    direction = annotation.get("direction_deg")
    direction = -1.0 if direction is None or motion != "translation" else float(direction)
    return speed, direction, CURVATURES.index(curvature), MOTIONS.index(motion)


def window(pressure: np.ndarray, labels: np.ndarray, t_ns: np.ndarray | None = None,
           length: int = WINDOW, stride: int = 5, annotation: dict | None = None,
           source: int = 0, source_id: str = "") -> WindowSet:
    """Sliding ``(6, length)`` windows labelled by their final frame."""
    if stride < 1:
        raise DataError("stride must be >= 1")
    n = len(labels)
    if n < length:
        log.warning("recording %s has %d frames (< %d); skipped", source_id or source, n, length)
        return empty_windows()
    ends = np.arange(length - 1, n, stride)
    idx = ends[:, None] - np.arange(length - 1, -1, -1)[None, :]
    x = pressure[idx].transpose(0, 2, 1)
    speed, direction, curv, motion = _annotation_codes(annotation or {})
    m = len(ends)
    t_end = t_ns[ends] if t_ns is not None else ends
    return WindowSet(np.ascontiguousarray(x, dtype=np.float64), labels[ends].astype(np.int64),
                     np.full(m, speed), np.full(m, direction), np.full(m, curv, dtype=np.int64),
                     np.full(m, motion, dtype=np.int64), np.full(m, source, dtype=np.int64),
                     np.asarray(t_end, dtype=np.int64), [source_id or str(source)])


def recording_windows(rec: Recording, stride: int = 5, v_slip: float = 0.01, v_static: float = 0.005,
                      r_eff: float = 0.02) -> WindowSet:
    """synchronize -> label_frames -> window for one recording."""
    if rec.gap_flag:
        log.warning("recording %s has frame gaps over 3 periods", rec.source_id)
    s = synchronize(rec)
    labels = label_frames(surface_speed(s.velocity, s.omega, r_eff), v_slip, v_static)
    return window(s.pressure, labels, s.t_ns, stride=stride, annotation=rec.annotation, source_id=rec.source_id)


def windows_from_recordings(recs: list[Recording], stride: int = 5, **kw) -> WindowSet:
    return WindowSet.concat([recording_windows(r, stride, **kw) for r in recs])


# ---------------------------------------------------------------------------
# Normalisation, balancing, augmentation, splitting
# ---------------------------------------------------------------------------


def compute_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std over windows and time."""
    return x.mean(axis=(0, 2)), x.std(axis=(0, 2))


def normalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (x - mean[:, None]) / np.maximum(std, 1e-9)[:, None]


def undersample(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices of a shuffled subset with both classes cut to the minority count."""
    y = np.asarray(y)
    idx0, idx1 = np.flatnonzero(y == STATIC), np.flatnonzero(y == SLIP)
    if len(idx0) == 0 or len(idx1) == 0:
        raise DataError(f"cannot balance: class counts static={len(idx0)}, slip={len(idx1)}")
    n = min(len(idx0), len(idx1))
    chosen = np.concatenate([rng.choice(idx0, n, replace=False), rng.choice(idx1, n, replace=False)])
    return rng.permutation(chosen)


def augment(x: np.ndarray, rng: np.random.Generator, sigma: float = 0.05, p: float = 0.25) -> np.ndarray:
    """Random grid symmetries then additive Gaussian noise.

    Each of x-flip, y-flip and 180-degree rotation is applied independently
    with probability ``p`` per window.  Works on one ``(6, T)`` window or a
    stack ``(N, 6, T)``.
    """
    single = x.ndim == 2
    out = np.array(x[None] if single else x, dtype=np.float64)
    for perm in (X_FLIP, Y_FLIP, ROT180):
        hit = rng.random(len(out)) < p
        out[hit] = out[hit][:, perm]
    if sigma > 0:
        out += rng.normal(0.0, sigma, size=out.shape)
    return out[0] if single else out


def split(n_recordings: int, rng: np.random.Generator, val_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Recording indices for training and validation."""
    if n_recordings < 10:
        raise DataError(f"need at least 10 recordings to split, got {n_recordings}")
    n_val = max(1, int(round(val_fraction * n_recordings)))
    order = rng.permutation(n_recordings)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def build_dataset(windows: WindowSet, rng: np.random.Generator, val_fraction: float = 0.1) -> Dataset:
    """Split by recording, then normalise both halves with training stats."""
    n_src = len(windows.sources) or int(windows.source.max()) + 1
    train_src, val_src = split(n_src, rng, val_fraction)
    train = windows.subset(np.flatnonzero(np.isin(windows.source, train_src)))
    val = windows.subset(np.flatnonzero(np.isin(windows.source, val_src)))
    mean, std = compute_stats(train.x)
    return Dataset(train.with_x(normalize(train.x, mean, std)), val.with_x(normalize(val.x, mean, std)),
                   mean, std)


# ---------------------------------------------------------------------------
# Window cache
# ---------------------------------------------------------------------------

CACHE_MAGIC = b"BSLD"
CACHE_VERSION = 1


def save_windows(ws: WindowSet, path) -> None:
    """Versioned little-endian cache: float32 windows, labels and metadata."""
    n, c, t = ws.x.shape
    names = json.dumps(list(ws.sources)).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<HIII", CACHE_VERSION, n, c, t))
        fh.write(struct.pack("<I", len(names)) + names)
        fh.write(ws.x.astype("<f4").tobytes())
        fh.write(ws.y.astype("u1").tobytes())
        fh.write(ws.speed.astype("<f4").tobytes())
        fh.write(ws.direction.astype("<f4").tobytes())
        fh.write(ws.curvature.astype("u1").tobytes())
        fh.write(ws.motion.astype("u1").tobytes())
        fh.write(ws.source.astype("<u4").tobytes())
        fh.write(ws.t_end_ns.astype("<i8").tobytes())


def load_windows(path) -> WindowSet:
    buf = Path(path).read_bytes()
    if buf[:4] != CACHE_MAGIC:
        raise DataError(f"{path}: not a window cache")
    version, n, c, t = struct.unpack_from("<HIII", buf, 4)
    if version != CACHE_VERSION:
        raise DataError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    off = 18
    (ln,) = struct.unpack_from("<I", buf, off)
    off += 4
    sources = json.loads(buf[off:off + ln].decode())
    off += ln

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    try:
        x = take("<f4", n * c * t).reshape(n, c, t).astype(np.float64)
        y = take("u1", n).astype(np.int64)
        speed = take("<f4", n).astype(np.float64)
        direction = take("<f4", n).astype(np.float64)
        curv = take("u1", n).astype(np.int64)
        motion = take("u1", n).astype(np.int64)
        source = take("<u4", n).astype(np.int64)
        t_end = take("<i8", n).astype(np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: truncated window cache") from exc
    return WindowSet(x, y, speed, direction, curv, motion, source, t_end, sources)
