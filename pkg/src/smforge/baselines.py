"""Classical recovery baselines: bicubic, strided bicubic and DCT-sparse ISTA."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dctn, idctn

from .core import ComplexImage, check_scale, downsample_array
from .errors import ConfigError

CUBIC_A = -0.5


class CsConvergenceWarning(UserWarning):
    pass


def cubic_kernel(t, a: float = CUBIC_A):
    t = np.abs(np.asarray(t, dtype=float))
    out = np.zeros_like(t)
    near = t <= 1
    far = (t > 1) & (t < 2)
    out[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    out[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return out


@lru_cache(maxsize=64)
def interp_matrix(n_in: int, s: int, anchored: bool = False) -> np.ndarray:
    """``(n_in*s, n_in)`` cubic interpolation matrix with edge replication.

    ``anchored=False`` is the usual cell-centred resize; ``anchored=True``
    places low-res sample ``j`` exactly on high-res pixel ``s*j``.
    """
    n_out = n_in * s
    out = np.arange(n_out, dtype=float)
    u = out / s if anchored else (out + 0.5) / s - 0.5
    base = np.floor(u).astype(int)
    frac = u - base
    w = np.zeros((n_out, n_in))
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, n_in - 1)
        np.add.at(w, (np.arange(n_out), idx), cubic_kernel(frac - tap))
    w.setflags(write=False)
    return w


def upsample_array(values: np.ndarray, s: int, anchored: bool = False) -> np.ndarray:
    """Separable cubic upsampling over the last two axes (real or complex)."""
    if s == 1:
        return np.array(values, copy=True)
    wy = interp_matrix(values.shape[-2], s, anchored)
    wx = interp_matrix(values.shape[-1], s, anchored)
    return wy @ values @ wx.T


def bicubic_upsample(img: ComplexImage, s: int) -> ComplexImage:
    s = check_scale(s)
    grid = type(img.grid)(img.grid.nx * s, img.grid.ny * s, img.grid.fov_x, img.grid.fov_y)
    return ComplexImage(grid, upsample_array(img.values, s))


def strided_bicubic(img: ComplexImage, s: int) -> ComplexImage:
    s = check_scale(s)
    grid = type(img.grid)(img.grid.nx * s, img.grid.ny * s, img.grid.fov_x, img.grid.fov_y)
    return ComplexImage(grid, upsample_array(img.values, s, anchored=True))


@dataclass(frozen=True)
class CsConfig:
    transform: str = "dct2"
    lam: float = 1e-3
    iterations: int = 500
    step_size: float = 1.0
    tol: float = 1e-10

    def __post_init__(self):
        if self.transform != "dct2":
            raise ConfigError(f"unsupported sparsifying transform {self.transform!r}")
        if self.lam < 0 or self.iterations < 1 or self.step_size <= 0:
            raise ConfigError("CS config needs lam >= 0, iterations >= 1, step_size > 0")


def soft_threshold(z, tau):
    """Complex-aware shrinkage of magnitudes by ``tau``."""
    z = np.asarray(z)
    mag = np.abs(z)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(mag > tau, 1 - tau / np.where(mag > 0, mag, 1), 0.0)
    out = z * factor
    return out if out.ndim else out.item()


def _dct(x):
    return dctn(x.real, norm="ortho") + 1j * dctn(x.imag, norm="ortho")


def _idct(z):
    return idctn(z.real, norm="ortho") + 1j * idctn(z.imag, norm="ortho")


def cs_objective(z, y, s, lam):
    resid = downsample_array(_idct(z), s) - y
    return 0.5 * float(np.sum(np.abs(resid) ** 2)) + lam * float(np.sum(np.abs(z)))


def ista(y: np.ndarray, s: int, cfg: CsConfig):
    """Solve min_z 0.5||M D^-1 z - y||^2 + lam ||z||_1 with M the stride mask.

    Returns ``(x, objective_history, converged)``.
    """
    ny, nx = y.shape
    shape = (ny * s, nx * s)

    def adjoint(r):
        full = np.zeros(shape, dtype=np.complex128)
        full[::s, ::s] = r
        return full

    z = np.zeros(shape, dtype=np.complex128)
    history = [cs_objective(z, y, s, cfg.lam)]
    best_z, best_obj = z, history[0]
    converged = False
    for _ in range(cfg.iterations):
        x = _idct(z)
        grad = _dct(adjoint(downsample_array(x, s) - y))
        z_new = soft_threshold(z - cfg.step_size * grad, cfg.lam * cfg.step_size)
        obj = cs_objective(z_new, y, s, cfg.lam)
        history.append(obj)
        delta = np.linalg.norm(z_new - z)
        z = z_new
        if obj <= best_obj:
            best_z, best_obj = z, obj
        if delta <= cfg.tol * max(np.linalg.norm(z), 1e-300):
            converged = True
            break
    return _idct(best_z), np.array(history), converged


def cs_recover(sm_lr_row: ComplexImage, s: int, cfg: CsConfig | None = None) -> ComplexImage:
    cfg = cfg or CsConfig()
    s = check_scale(s)
    x, _, converged = ista(np.asarray(sm_lr_row.values), s, cfg)
    if not converged:
        warnings.warn(f"ISTA did not converge in {cfg.iterations} iterations", CsConvergenceWarning)
    g = sm_lr_row.grid
    return ComplexImage(type(g)(g.nx * s, g.ny * s, g.fov_x, g.fov_y), x)
