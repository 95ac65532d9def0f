"""Field-free-point Lissajous MPI simulator.

Ideal (equilibrium Langevin) particles, homogeneous unit-sensitivity receive
coils along x and y, and a 2D selection field with gradients ``G_x, G_y``.
A system-matrix column is the Fourier spectrum of the voltage induced by a
unit point sample sitting at one grid position.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import FreqDescriptor, Grid, SystemMatrix
from .errors import ConfigError, InvalidDataError, ShapeError, UndefinedMetricError

K_B = 1.380649e-23


@dataclass(frozen=True)
class SimConfig:
    gradient_x: float = 2.0  # T/m
    gradient_y: float = 2.0
    f_drive: float = 25_000.0  # Hz, x axis
    f_focus: float = 24_750.0  # Hz, y axis
    amp_drive: float | None = None  # mT; None derives FOV*G/2
    amp_focus: float | None = None
    particle_diameter: float = 30.0  # nm
    fov: Grid = field(default_factory=lambda: Grid(32, 32, 32.0, 32.0))
    n_periods: int = 1
    samples_per_period: int = 1000  # per drive period
    temperature: float = 300.0  # K (assumed)
    saturation_magnetization: float = 474e3  # A/m, magnetite (assumed)
    quadrature_weight: float = 1.0
    rows_per_channel: int = 200
    rng_seed: int = 0

    def __post_init__(self):
        positive = {
            "gradient_x": self.gradient_x, "gradient_y": self.gradient_y,
            "f_drive": self.f_drive, "f_focus": self.f_focus,
            "particle_diameter": self.particle_diameter, "temperature": self.temperature,
            "saturation_magnetization": self.saturation_magnetization,
            "quadrature_weight": self.quadrature_weight,
        }
        for name, v in positive.items():
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{name} must be strictly positive, got {v}")
        for name in ("amp_drive", "amp_focus"):
            v = getattr(self, name)
            if v is not None and (not np.isfinite(v) or v <= 0):
                raise ConfigError(f"{name} must be positive when given")
        if self.f_drive == self.f_focus:
            raise ConfigError("drive and focus frequencies must differ")
        if self.f_drive != round(self.f_drive) or self.f_focus != round(self.f_focus):
            raise ConfigError("frequencies must be whole numbers of Hz")
        if self.n_periods < 1 or self.samples_per_period < 2 or self.rows_per_channel < 1:
            raise ConfigError("n_periods, samples_per_period and rows_per_channel must be positive")

    @property
    def base_frequency(self) -> float:
        return float(math.gcd(int(self.f_drive), int(self.f_focus)))

    @property
    def repetition_time(self) -> float:
        return 1.0 / self.base_frequency

    @property
    def n_samples(self) -> int:
        return int(self.samples_per_period * round(self.f_drive / self.base_frequency) * self.n_periods)

    @property
    def moment(self) -> float:
        d = self.particle_diameter * 1e-9
        return math.pi / 6 * self.saturation_magnetization * d**3

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fov"] = self.fov.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "fov" in d and isinstance(d["fov"], dict):
            d["fov"] = Grid(**d["fov"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class Phantom:
    grid: Grid
    concentration: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.concentration, dtype=np.float64)
        if c.shape != self.grid.shape:
            raise ShapeError(f"phantom shape {c.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise InvalidDataError("concentration must be finite and nonnegative")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "concentration", c)


@dataclass(frozen=True)
class VoltageSpectrum:
    coefficients: np.ndarray
    freqs: tuple[FreqDescriptor, ...]

    def __post_init__(self):
        u = np.asarray(self.coefficients, dtype=np.complex128)
        if u.ndim != 1 or u.shape[0] != len(self.freqs):
            raise ShapeError("spectrum length must match its frequency descriptors")
        if not np.all(np.isfinite(u)):
            raise InvalidDataError("spectrum contains non-finite entries")
        object.__setattr__(self, "coefficients", u)
        object.__setattr__(self, "freqs", tuple(self.freqs))


def drive_amplitudes(cfg: SimConfig) -> tuple[float, float]:
    """Drive amplitudes in mT. mm * T/m is numerically mT."""
    ax = cfg.amp_drive if cfg.amp_drive is not None else cfg.fov.fov_x * cfg.gradient_x / 2
    ay = cfg.amp_focus if cfg.amp_focus is not None else cfg.fov.fov_y * cfg.gradient_y / 2
    return float(ax), float(ay)


def ffp_trajectory(cfg: SimConfig, t):
    """Field-free-point position (mm) at time ``t`` (s)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    ax, ay = drive_amplitudes(cfg)
    x = ax / cfg.gradient_x * np.sin(2 * np.pi * cfg.f_drive * t)
    y = ay / cfg.gradient_y * np.sin(2 * np.pi * cfg.f_focus * t)
    return x, y


def langevin(xi):
    """coth(xi) - 1/xi, with the removable singularity at 0 filled in."""
    xi = np.asarray(xi, dtype=float)
    out = np.empty_like(xi)
    small = np.abs(xi) < 1e-3
    xs = xi[small]
    out[small] = xs / 3 - xs**3 / 45 + 2 * xs**5 / 945
    xl = xi[~small]
    out[~small] = 1.0 / np.tanh(xl) - 1.0 / xl
    return out if out.ndim else float(out)


def _langevin_over_x(xi):
    # L(x)/x, finite at 0
    out = np.empty_like(xi)
    small = np.abs(xi) < 1e-3
    xs = xi[small]
    out[small] = 1 / 3 - xs**2 / 45 + 2 * xs**4 / 945
    xl = xi[~small]
    out[~small] = (1.0 / np.tanh(xl) - 1.0 / xl) / xl
    return out


def _langevin_prime(xi):
    out = np.empty_like(xi)
    a = np.abs(xi)
    small = a < 1e-3
    xs = xi[small]
    out[small] = 1 / 3 - xs**2 / 15 + 2 * xs**4 / 189
    xl = a[~small]
    e = np.exp(-2 * xl)
    out[~small] = 1.0 / xl**2 - 4 * e / (1 - e) ** 2
    return out


def mixing_frequencies(cfg: SimConfig, count: int) -> list[tuple[int, int, float]]:
    """Positive mixing lines ``m*f_D + n*f_E`` ordered by |m|+|n|, then frequency."""
    seen = set()
    lines = []
    order = 1
    while len(lines) < count:
        batch = []
        for m in range(-order, order + 1):
            for n in (order - abs(m), -(order - abs(m))):
                f = m * cfg.f_drive + n * cfg.f_focus
                if f > 0 and f not in seen:
                    seen.add(f)
                    batch.append((m, n, f))
        batch.sort(key=lambda r: r[2])
        lines.extend(batch)
        order += 1
    return lines[:count]


def sample_times(cfg: SimConfig, n_repeats: int | None = None) -> np.ndarray:
    reps = cfg.n_periods if n_repeats is None else n_repeats
    n = cfg.n_samples // cfg.n_periods * reps
    return np.arange(n) * (cfg.repetition_time * reps / n)


def voltage_signal(cfg: SimConfig, x_mm, y_mm, t) -> np.ndarray:
    """Induced voltage ``(2, P, T)`` for unit samples at positions ``(P,)``.

    Voltage is minus the time derivative of the particle moment, evaluated
    analytically via the chain rule so the sampled signal is exactly periodic.
    """
    x = np.asarray(x_mm, dtype=float).reshape(-1, 1) * 1e-3
    y = np.asarray(y_mm, dtype=float).reshape(-1, 1) * 1e-3
    t = np.asarray(t, dtype=float).reshape(1, -1)
    ax, ay = (a * 1e-3 for a in drive_amplitudes(cfg))
    wd, we = 2 * np.pi * cfg.f_drive, 2 * np.pi * cfg.f_focus
    bx = cfg.gradient_x * x - ax * np.sin(wd * t)
    by = cfg.gradient_y * y - ay * np.sin(we * t)
    dbx = np.broadcast_to(-ax * wd * np.cos(wd * t), bx.shape)
    dby = np.broadcast_to(-ay * we * np.cos(we * t), by.shape)
    beta = cfg.moment / (K_B * cfg.temperature)
    b = np.hypot(bx, by)
    xi = beta * b
    iso = beta * _langevin_over_x(xi)  # L(xi)/|B|
    par = beta * _langevin_prime(xi)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(b > 0, bx / b, 0.0)
        uy = np.where(b > 0, by / b, 0.0)
    proj = ux * dbx + uy * dby
    # dM/dt = m [ L/b (I - uu^T) + beta L' uu^T ] dB/dt
    dmx = iso * (dbx - ux * proj) + par * ux * proj
    dmy = iso * (dby - uy * proj) + par * uy * proj
    scale = -cfg.moment * cfg.quadrature_weight
    return np.stack([scale * dmx, scale * dmy])


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SMFORGE_THREADS", "1")))
    except ValueError:
        return 1


def simulate_sm(cfg: SimConfig) -> SystemMatrix:
    grid = cfg.fov
    lines = mixing_frequencies(cfg, cfg.rows_per_channel)
    bins = np.array([round(f / cfg.base_frequency) * cfg.n_periods for _, _, f in lines])
    n_t = cfg.n_samples
    if bins.max() >= n_t // 2:
        raise ConfigError(
            f"mixing line at bin {bins.max()} exceeds Nyquist bin {n_t // 2}; "
            "increase samples_per_period"
        )
    xs, ys = grid.positions()
    xs, ys = xs.ravel(), ys.ravel()
    t = sample_times(cfg)
    chunk = max(1, 2_000_000 // n_t)
    starts = list(range(0, grid.n, chunk))

    def run(s):
        v = voltage_signal(cfg, xs[s:s + chunk], ys[s:s + chunk], t)
        return np.fft.rfft(v, axis=-1)[..., bins] / n_t

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        parts = list(pool.map(run, starts))
    spec = np.concatenate(parts, axis=1)  # (2, N, K_per_channel)
    data = np.concatenate([spec[0].T, spec[1].T], axis=0)
    freqs = []
    for ch in range(2):
        for j, (m, n, f) in enumerate(lines):
            freqs.append(FreqDescriptor(ch * len(lines) + j, f, ch, (m, n)))
    return SystemMatrix(grid, tuple(freqs), data)


def simulate_voltage(sm: SystemMatrix, ph: Phantom) -> VoltageSpectrum:
    if ph.grid.shape != sm.grid.shape:
        raise ShapeError("phantom grid does not match system matrix grid")
    return VoltageSpectrum(sm.data @ ph.concentration.ravel(), sm.freqs)


def add_noise(sm: SystemMatrix, snr_db: float, seed: int) -> SystemMatrix:
    """Add complex Gaussian noise to every row at the given per-row SNR."""
    if not np.isfinite(snr_db):
        raise InvalidDataError("snr_db must be finite")
    power = np.mean(np.abs(sm.data) ** 2, axis=1)
    if not np.any(power > 0):
        raise UndefinedMetricError("SNR is undefined for an all-zero system matrix")
    rng = np.random.default_rng(seed)
    sigma2 = power / 10 ** (snr_db / 10)
    noise = rng.standard_normal(sm.data.shape) + 1j * rng.standard_normal(sm.data.shape)
    noisy = sm.data + np.sqrt(sigma2 / 2)[:, None] * noise
    snr = np.where(sigma2 > 0, power / np.where(sigma2 > 0, sigma2, 1), 0.0)
    return SystemMatrix(sm.grid, sm.freqs, noisy, snr)
