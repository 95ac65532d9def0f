"""Pixel and structure losses with hand-derived gradients.

Every loss takes ``pred`` and ``gt`` arrays of identical shape ``(..., H, W)``
and returns a :class:`LossEval` holding the scalar value and the gradient
with respect to ``pred``. Leading axes (batch, channels) are treated as
independent images and the per-image losses are averaged.

Patch statistics use the population estimator over ``window x window``
tiles placed every ``stride`` pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    window: int = 8
    stride: int | None = None  # None means non-overlapping (stride = window)
    c1: float = 0.01**2
    c2: float = 0.03**2
    c3: float | None = None  # kept for completeness; the merged form implies c3 = c2 / 2
    patch_norm_exponent: int = 2
    # "lifted": per-patch (1 + L_AD)(1 + S_AD), so a vanishing structure term
    # leaves the luminance term active. "product": bare L_AD * S_AD.
    patch_combine: str = "lifted"
    # (lo, hi): structure losses see (x - lo) / (hi - lo), i.e. intensities in [0, 1]
    data_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.window < 1 or (self.stride is not None and self.stride < 1):
            raise ConfigError("window and stride must be positive")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("stabilizers c1, c2 must be positive")
        if self.patch_combine not in ("lifted", "product"):
            raise ConfigError(f"unknown patch_combine {self.patch_combine!r}")
        if self.data_range is not None:
            lo, hi = self.data_range
            if not hi > lo:
                raise ConfigError("data_range must satisfy hi > lo")
            object.__setattr__(self, "data_range", (float(lo), float(hi)))

    @property
    def step(self) -> int:
        return self.stride or self.window


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class PatchStats:
    """Per-patch moments, each shaped ``(..., Pi, Pj)``."""

    mu_x: np.ndarray
    mu_y: np.ndarray
    var_x: np.ndarray
    var_y: np.ndarray
    cov_xy: np.ndarray

    @classmethod
    def scalar(cls, mu_x, mu_y, var_x, var_y, cov_xy) -> "PatchStats":
        return cls(*(np.asarray(v, dtype=float) for v in (mu_x, mu_y, var_x, var_y, cov_xy)))


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.ndim < 2:
        raise ShapeError("losses need at least 2D images")
    return pred, gt


def _rescale(pred, gt, cfg: LossConfig):
    """Map into the configured data range; returns (pred, gt, d(mapped)/d(pred))."""
    if cfg.data_range is None:
        return pred, gt, 1.0
    lo, hi = cfg.data_range
    k = 1.0 / (hi - lo)
    return (pred - lo) * k, (gt - lo) * k, k


def _n_images(shape) -> int:
    return int(np.prod(shape[:-2], dtype=int))


def _patches(a: np.ndarray, cfg: LossConfig) -> np.ndarray:
    h, w = a.shape[-2:]
    if cfg.window > h or cfg.window > w:
        raise ShapeError(f"window {cfg.window} larger than image {h}x{w}")
    view = np.lib.stride_tricks.sliding_window_view(a, (cfg.window, cfg.window), axis=(-2, -1))
    return view[..., :: cfg.step, :: cfg.step, :, :]


def _scatter(patch_grad: np.ndarray, shape, cfg: LossConfig) -> np.ndarray:
    """Sum per-patch pixel gradients ``(..., Pi, Pj, w, w)`` back onto the image."""
    out = np.zeros(shape)
    pi, pj = patch_grad.shape[-4:-2]
    st, win = cfg.step, cfg.window
    for u in range(win):
        for v in range(win):
            out[..., u : u + st * (pi - 1) + 1 : st, v : v + st * (pj - 1) + 1 : st] += patch_grad[..., u, v]
    return out


def patch_stats(pred, gt, cfg: LossConfig) -> PatchStats:
    pred, gt = _check(pred, gt)
    px, py = _patches(pred, cfg), _patches(gt, cfg)
    mx = px.mean(axis=(-2, -1))
    my = py.mean(axis=(-2, -1))
    dx = px - mx[..., None, None]
    dy = py - my[..., None, None]
    return PatchStats(
        mx, my, (dx**2).mean(axis=(-2, -1)), (dy**2).mean(axis=(-2, -1)), (dx * dy).mean(axis=(-2, -1))
    )


def _moment_grad(pred, gt, stats: PatchStats, d_mu, d_var, d_cov, cfg: LossConfig):
    """Chain per-patch partials w.r.t. (mu_x, var_x, cov_xy) back to pixels of pred."""
    px, py = _patches(pred, cfg), _patches(gt, cfg)
    n = cfg.window * cfg.window
    dx = px - stats.mu_x[..., None, None]
    dy = py - stats.mu_y[..., None, None]
    g = (d_mu[..., None, None] + 2 * d_var[..., None, None] * dx + d_cov[..., None, None] * dy) / n
    return _scatter(g, pred.shape, cfg)


def l1_loss(pred, gt, cfg: LossConfig | None = None) -> LossEval:
    pred, gt = _check(pred, gt)
    d = pred - gt
    return LossEval(float(np.abs(d).mean()), np.sign(d) / d.size)


def l2_loss(pred, gt, cfg: LossConfig | None = None) -> LossEval:
    pred, gt = _check(pred, gt)
    d = pred - gt
    return LossEval(float((d**2).mean()), 2 * d / d.size)


def ssim_index(stats: PatchStats, cfg: LossConfig) -> np.ndarray:
    """Per-patch luminance times contrast-structure, with the c3 = c2 / 2 merge."""
    lum = (2 * stats.mu_x * stats.mu_y + cfg.c1) / (stats.mu_x**2 + stats.mu_y**2 + cfg.c1)
    cs = (2 * stats.cov_xy + cfg.c2) / (stats.var_x + stats.var_y + cfg.c2)
    return lum * cs


def ssim(pred, gt, cfg: LossConfig | None = None) -> LossEval:
    """1 - mean patch SSIM."""
    cfg = cfg or LossConfig()
    pred, gt = _check(pred, gt)
    pred, gt, k = _rescale(pred, gt, cfg)
    st = patch_stats(pred, gt, cfg)
    ln = 2 * st.mu_x * st.mu_y + cfg.c1
    ld = st.mu_x**2 + st.mu_y**2 + cfg.c1
    cn = 2 * st.cov_xy + cfg.c2
    cd = st.var_x + st.var_y + cfg.c2
    lum, cs = ln / ld, cn / cd
    n_patch = lum.shape[-2] * lum.shape[-1]
    w = -1.0 / (n_patch * _n_images(pred.shape))
    d_mu = w * cs * (2 * st.mu_y * ld - ln * 2 * st.mu_x) / ld**2
    d_var = w * lum * (-cn / cd**2)
    d_cov = w * lum * (2 / cd)
    grad = _moment_grad(pred, gt, st, d_mu, d_var, d_cov, cfg)
    return LossEval(float(1 - (lum * cs).mean()), k * grad)


def l_ad(stats: PatchStats, cfg: LossConfig | None = None):
    """Absolute-difference luminance term per patch."""
    cfg = cfg or LossConfig()
    return np.abs(stats.mu_x - stats.mu_y) / (stats.mu_x**2 + stats.mu_y**2 + cfg.c1)


def s_ad(stats: PatchStats, cfg: LossConfig | None = None):
    """Absolute-difference structure term per patch; zero iff correlation is +1."""
    cfg = cfg or LossConfig()
    sx = np.sqrt(stats.var_x)
    sy = np.sqrt(stats.var_y)
    return np.abs(stats.cov_xy - sx * sy) / (stats.var_x + stats.var_y + cfg.c2)


def _ssim_ad_parts(pred, gt, cfg: LossConfig):
    """Return (patch-aggregated structure factor, its gradient, floor).

    The factor is ``sum_i T_i / N**e``; with the lifted combination
    ``T_i = (1 + L_i)(1 + S_i)`` its minimum over pred is the floor
    ``N**(1-e)``, reached at pred == gt.
    """
    st = patch_stats(pred, gt, cfg)
    mx, my, vx, vy, cov = st.mu_x, st.mu_y, st.var_x, st.var_y, st.cov_xy
    dm = mx - my
    ld = mx**2 + my**2 + cfg.c1
    lum = np.abs(dm) / ld
    dl_dmu = np.sign(dm) / ld - np.abs(dm) * 2 * mx / ld**2

    sx, sy = np.sqrt(vx), np.sqrt(vy)
    q = cov - sx * sy
    sd = vx + vy + cfg.c2
    struct = np.abs(q) / sd
    dq_dvx = -sy / (2 * np.maximum(sx, 1e-12))
    ds_dvx = np.sign(q) * dq_dvx / sd - np.abs(q) / sd**2
    ds_dcov = np.sign(q) / sd

    n_patch = lum.shape[-2] * lum.shape[-1]
    norm = float(n_patch) ** cfg.patch_norm_exponent
    if cfg.patch_combine == "lifted":
        terms = (1 + lum) * (1 + struct)
        dt_dl, dt_ds = 1 + struct, 1 + lum
        floor = n_patch / norm
    else:
        terms = lum * struct
        dt_dl, dt_ds = struct, lum
        floor = 0.0
    factor = terms.sum(axis=(-2, -1)) / norm  # per image
    grad = _moment_grad(pred, gt, st, dt_dl * dl_dmu / norm, dt_ds * ds_dvx / norm, dt_ds * ds_dcov / norm, cfg)
    return factor, grad, floor


def ssim_ad(pred, gt, cfg: LossConfig | None = None) -> LossEval:
    cfg = cfg or LossConfig()
    pred, gt = _check(pred, gt)
    pred, gt, k = _rescale(pred, gt, cfg)
    factor, grad, floor = _ssim_ad_parts(pred, gt, cfg)
    m = _n_images(pred.shape)
    return LossEval(float((factor - floor).mean()), k * grad / m)


def fsc_loss(pred, gt, cfg: LossConfig | None = None) -> LossEval:
    """Structure factor times the global mean absolute error, per image."""
    cfg = cfg or LossConfig()
    pred, gt = _check(pred, gt)
    pred, gt, k = _rescale(pred, gt, cfg)
    factor, dfactor, _ = _ssim_ad_parts(pred, gt, cfg)
    d = pred - gt
    per_pixel = d.shape[-2] * d.shape[-1]
    l1 = np.abs(d).mean(axis=(-2, -1))
    dl1 = np.sign(d) / per_pixel
    m = _n_images(pred.shape)
    value = float((factor * l1).mean())
    grad = (dfactor * l1[..., None, None] + factor[..., None, None] * dl1) / m
    return LossEval(value, k * grad)


LOSSES: dict[str, Callable[..., LossEval]] = {
    "l1": l1_loss,
    "l2": l2_loss,
    "ssim": ssim,
    "ssim_ad": ssim_ad,
    "fsc": fsc_loss,
}


def get_loss(name: str) -> Callable[..., LossEval]:
    try:
        return LOSSES[name]
    except KeyError:
        raise ConfigError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None


def finite_diff_grad(loss_fn, pred, gt, epsilon: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``loss_fn(pred, gt).value`` w.r.t. pred."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    pred = np.array(pred, dtype=np.float64)
    grad = np.zeros_like(pred)
    flat, g = pred.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + epsilon
        up = loss_fn(pred, gt).value
        flat[i] = keep - epsilon
        down = loss_fn(pred, gt).value
        flat[i] = keep
        g[i] = (up - down) / (2 * epsilon)
    return grad


def grad_rel_error(analytic, numeric) -> float:
    """Norm-wise relative discrepancy ``|a - n| / max(|a|, |n|)``."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)
