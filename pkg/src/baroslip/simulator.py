"""Synthetic barometer-array recordings with exact ground-truth motion.

Taxel ``i`` at grid position ``g_i`` reads::

    p_i(t) = base_i + A * F(g_i - c(t)) + s(t) * gain * v_surf * e(t) * vib_i(t) + n_i(t)

``c(t)`` is the contact-footprint centre, ``F`` a curvature-dependent
footprint repeated periodically across the surface, ``s(t)`` is 1 while
moving, ``vib_i`` unit-RMS band-limited noise, ``e`` a slow log-normal
envelope (stick-slip comes in bursts) and ``n_i`` white sensor noise.
Every random stream comes from a counter-based generator keyed by
``(seed, trace id, stream)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import CURVATURES, MOTIONS, Recording

FS = 100
PITCH = 0.006  # m
VEL_RATE_HZ = 125  # robot controller rate for the velocity log
T0_NS = 1_000_000_000

# taxel centres (x, y) in metres, channel = 3 * row + col
GRID = np.array([[(c - 1) * PITCH, (r - 0.5) * PITCH] for r in range(2) for c in range(3)])

SPEEDS = (0.05, 0.075, 0.1)
DIRECTIONS = tuple(range(0, 360, 45))

# stream ids for rng derivation
_S_VIB, _S_NOISE, _S_TRACE, _S_ENV = 1, 2, 3, 4


def stream(seed: int, trace_id: int, channel: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trace_id, channel])))


@dataclass
class NoiseConfig:
    sensor_sigma: tuple = (0.07, 0.55)     # per-trace white-noise std drawn log-uniformly
    vib_band: tuple = (15.0, 45.0)         # Hz
    vib_gain: float = 20.0                 # RMS per m/s of surface speed
    amplitude: float = 2.5                 # footprint peak pressure
    base_jitter: float = 2.0               # per-taxel offset spread
    burst_depth: float = 0.8               # log-std of the vibration envelope, 0 = steady
    burst_band: tuple = (0.05, 1.0)        # Hz, envelope fluctuation band


@dataclass
class SimConfig:
    curvature: str = "planar"
    motion: str = "translation"
    speed: float = 0.05                    # m/s, translation only
    direction: float = 0.0                 # degrees, translation only
    angular_rate: float = 1.0              # rad/s, rotation only
    r_eff: float = 0.02                    # m, radius of the rotational contact path
    duration: float = 12.0                 # s
    motion_fraction: float = 0.5           # share of the trace spent moving, centred
    seed: int = 0
    trace_id: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def validate(self) -> None:
        if self.curvature not in CURVATURES or self.motion not in MOTIONS:
            raise ValueError(f"unknown curvature/motion {self.curvature}/{self.motion}")
        if (self.speed > 0) != (self.motion == "translation"):
            raise ValueError("speed > 0 iff motion is translation")
        if self.motion == "rotation" and self.angular_rate <= 0:
            raise ValueError("rotation needs a positive angular rate")
        if self.duration <= 0 or not 0 < self.motion_fraction <= 1:
            raise ValueError("duration must be > 0 and motion_fraction in (0, 1]")
        lo, hi = self.noise.vib_band
        if not 0 < lo < hi < FS / 2:
            raise ValueError(f"vibration band {self.noise.vib_band} must lie inside (0, {FS / 2}) Hz")

    @property
    def surface_speed(self) -> float:
        if self.motion == "translation":
            return self.speed
        if self.motion == "rotation":
            return self.r_eff * self.angular_rate
        return 0.0


# footprint shape: (sigma_x, sigma_y, period) in metres; inf sigma = ridge
_FOOTPRINTS = {
    "planar": (0.015, 0.015, 0.060),
    "spherical": (0.6 * PITCH, 0.6 * PITCH, 0.024),
    "cyl_x": (np.inf, 0.6 * PITCH, 0.024),   # ridge elongated along x
    "cyl_y": (0.6 * PITCH, np.inf, 0.024),
}


def footprint(curvature: str, delta: np.ndarray) -> np.ndarray:
    """Periodic footprint intensity in [0, 1] at offsets ``delta`` (..., 2)."""
    sx, sy, period = _FOOTPRINTS[curvature]
    out = 1.0
    for axis, s in ((0, sx), (1, sy)):
        if np.isinf(s):
            continue
        d = np.mod(delta[..., axis] + period / 2, period) - period / 2
        # nearest two images cover the periodic sum for sigma << period
        out = out * (np.exp(-0.5 * (d / s) ** 2) + np.exp(-0.5 * ((np.abs(d) - period) / s) ** 2))
    return out * np.ones(delta.shape[:-1])


def band_noise(n: int, band: tuple, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise with spectrum confined to ``band`` Hz."""
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1.0 / FS)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def burst_envelope(n: int, depth: float, band: tuple, rng: np.random.Generator) -> np.ndarray:
    """Log-normal envelope with unit mean square."""
    if depth <= 0:
        return np.ones(n)
    g = band_noise(n, band, rng)
    return np.exp(depth * g - depth ** 2)


def motion_window(cfg: SimConfig, n_frames: int) -> tuple[int, int]:
    """First and one-past-last moving frame."""
    if cfg.motion == "static":
        return n_frames, n_frames
    n_move = int(round(cfg.motion_fraction * n_frames))
    start = (n_frames - n_move) // 2
    return start, start + n_move


def _kinematics(cfg: SimConfig, t: np.ndarray, t_on: float, t_off: float, c0: np.ndarray):
    """Footprint centre, planar velocity and angular rate at times ``t`` (s)."""
    moving = (t >= t_on) & (t < t_off)
    tau = np.clip(t, t_on, t_off) - t_on
    centre = np.repeat(c0[None], len(t), axis=0)
    vel = np.zeros((len(t), 2))
    omega = np.zeros(len(t))
    if cfg.motion == "translation":
        u = np.array([np.cos(np.radians(cfg.direction)), np.sin(np.radians(cfg.direction))])
        centre = centre + cfg.speed * tau[:, None] * u
        vel[moving] = cfg.speed * u
    elif cfg.motion == "rotation":
        ang = cfg.angular_rate * tau
        r = cfg.r_eff
        centre = centre + r * np.column_stack([np.cos(ang) - 1.0, np.sin(ang)])
        omega[moving] = cfg.angular_rate
    return centre, vel, omega, moving


def simulate(cfg: SimConfig) -> Recording:
    """Generate one recording; deterministic in ``(seed, trace_id)``."""
    cfg.validate()
    n = int(round(cfg.duration * FS))
    i0, i1 = motion_window(cfg, n)
    t_on, t_off = i0 / FS, i1 / FS
    t = np.arange(n) / FS
    trace_rng = stream(cfg.seed, cfg.trace_id, _S_TRACE)
    c0 = trace_rng.uniform(-PITCH, PITCH, size=2)
    lo, hi = cfg.noise.sensor_sigma
    sigma = float(np.exp(trace_rng.uniform(np.log(lo), np.log(hi))))
    base = 100.0 + trace_rng.uniform(-cfg.noise.base_jitter, cfg.noise.base_jitter, size=6)

    centre, _, _, moving = _kinematics(cfg, t, t_on, t_off, c0)
    contact = footprint(cfg.curvature, GRID[None, :, :] - centre[:, None, :])
    p = base + cfg.noise.amplitude * contact
    vib_amp = cfg.noise.vib_gain * cfg.surface_speed
    env = burst_envelope(n, cfg.noise.burst_depth, cfg.noise.burst_band, stream(cfg.seed, cfg.trace_id, _S_ENV))
    for ch in range(6):
        if vib_amp > 0:
            p[:, ch] += moving * vib_amp * env * band_noise(n, cfg.noise.vib_band, stream(cfg.seed, cfg.trace_id, 16 * _S_VIB + ch))
        p[:, ch] += sigma * stream(cfg.seed, cfg.trace_id, 16 * _S_NOISE + ch).normal(size=n)

    n_vel = int(np.floor(cfg.duration * VEL_RATE_HZ)) + 1
    tv = np.arange(n_vel) / VEL_RATE_HZ
    _, vel, omega, _ = _kinematics(cfg, tv, t_on, t_off, c0)

    annotation = {
        "curvature": cfg.curvature,
        "motion": cfg.motion,
        "speed_mps": cfg.speed if cfg.motion == "translation" else 0.0,
        "direction_deg": cfg.direction if cfg.motion == "translation" else None,
        "angular_rate": cfg.angular_rate if cfg.motion == "rotation" else 0.0,
        "seed": cfg.seed,
        "trace_id": cfg.trace_id,
    }
    source_id = _trace_name(cfg)
    return Recording(
        source_id,
        T0_NS + np.arange(n, dtype=np.int64) * (1_000_000_000 // FS),
        p,
        T0_NS + np.round(tv * 1e9).astype(np.int64),
        vel,
        omega,
        annotation,
    )


SimTrace = Recording


def _trace_name(cfg: SimConfig) -> str:
    if cfg.motion == "translation":
        tag = f"tr_{cfg.curvature}_v{int(round(cfg.speed * 1000)):03d}_d{int(cfg.direction):03d}"
    else:
        tag = f"{cfg.motion[:3]}_{cfg.curvature}"
    return f"s{cfg.seed}_{cfg.trace_id:03d}_{tag}"


def condition_matrix(duration: float = 12.0, seed: int = 0, noise: NoiseConfig | None = None) -> list[SimConfig]:
    """Translation (curvature x speed x direction), rotation and static cells.

    The moving share of each motion trace is chosen so the corpus holds
    equal numbers of slip and static frames.
    """
    if duration < 2.0:
        raise ValueError("per-condition duration must be >= 2 s")
    noise = noise or NoiseConfig()
    cells = []
    for curv in CURVATURES:
        for speed in SPEEDS:
            for d in DIRECTIONS:
                cells.append(dict(curvature=curv, motion="translation", speed=speed, direction=float(d)))
    for curv in CURVATURES:
        cells.append(dict(curvature=curv, motion="rotation", speed=0.0))
    for curv in CURVATURES:
        cells.append(dict(curvature=curv, motion="static", speed=0.0))
    n_moving = sum(c["motion"] != "static" for c in cells)
    fraction = min(1.0, len(cells) / (2.0 * n_moving))
    return [SimConfig(duration=duration, seed=seed, trace_id=i, motion_fraction=fraction, noise=noise, **c)
            for i, c in enumerate(cells)]


def generate_matrix(seed: int = 0, duration: float = 12.0, noise: NoiseConfig | None = None) -> list[Recording]:
    return [simulate(cfg) for cfg in condition_matrix(duration, seed, noise)]


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, seed=seed)
