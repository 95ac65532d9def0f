"""Simulated system-matrix collections and low/high-resolution training pairs."""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import SystemMatrix, check_scale, downsample_array, rim_channels
from .errors import ConfigError, ShapeError
from .sim import SimConfig, add_noise, simulate_sm


@dataclass(frozen=True)
class DatasetSpec:
    """Which simulated matrices to build and how to split them (whole matrices per split)."""

    gradients: tuple[float, ...] = (2.0, 2.5, 3.0, 3.5, 4.0)
    diameters: tuple[float, ...] = (20.0, 23.75, 27.5, 31.25, 35.0)
    n_train: int = 16
    n_val: int = 4
    n_test: int = 5
    noise_snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        total = len(self.gradients) * len(self.diameters)
        if min(self.n_train, self.n_val, self.n_test) < 1 or self.n_train + self.n_val + self.n_test > total:
            raise ConfigError(f"split sizes must be >= 1 and fit within {total} matrices")

    def combos(self) -> list[tuple[float, float]]:
        return list(itertools.product(self.gradients, self.diameters))

    def split_indices(self) -> dict[str, list[int]]:
        order = np.random.default_rng(self.seed).permutation(len(self.combos())).tolist()
        a, b = self.n_train, self.n_train + self.n_val
        return {
            "train": sorted(order[:a]),
            "val": sorted(order[a:b]),
            "test": sorted(order[b:b + self.n_test]),
        }


def simulate_collection(base: SimConfig, spec: DatasetSpec) -> dict[str, list[SystemMatrix]]:
    """Simulate every matrix that takes part in a split."""
    combos = spec.combos()
    out: dict[str, list[SystemMatrix]] = {}
    for name, idx in spec.split_indices().items():
        mats = []
        for i in idx:
            g, d = combos[i]
            cfg = dataclasses.replace(base, gradient_x=g, gradient_y=g, particle_diameter=d)
            sm = simulate_sm(cfg)
            if spec.noise_snr_db is not None:
                sm = add_noise(sm, spec.noise_snr_db, seed=spec.seed * 1000 + i)
            mats.append(sm)
        out[name] = mats
    return out


@dataclass
class SrPairs:
    """High-res complex rows ready to be cut into normalized training pairs."""

    hr: np.ndarray  # (M, H, W) complex
    scale: int

    def __post_init__(self):
        check_scale(self.scale)
        if self.hr.ndim != 3:
            raise ShapeError("hr must be a (M, H, W) stack")
        downsample_array(self.hr[:0], self.scale)

    def __len__(self):
        return self.hr.shape[0]

    @classmethod
    def from_matrices(cls, mats, scale: int) -> "SrPairs":
        return cls(np.concatenate([m.images() for m in mats]) if mats else np.zeros((0, 1, 1), complex), scale)


def make_pairs(hr: np.ndarray, scale: int):
    """Cut HR stacks into normalized LR RIM inputs and HR real/imag targets.

    Each sample is normalized by the peak modulus of its low-res version,
    since that is all that is known at inference time.
    Returns ``(inputs (B,3,h,w), targets (B,2,H,W), scales (B,))``.
    """
    lr = downsample_array(hr, scale)
    scales = np.abs(lr).reshape(len(lr), -1).max(axis=1)
    scales = np.where(scales > 0, scales, 1.0)
    inputs = np.stack([rim_channels(x)[0] for x in lr]) if len(lr) else np.zeros((0, 3, *lr.shape[1:]))
    norm_hr = hr / scales[:, None, None]
    targets = np.stack([norm_hr.real, norm_hr.imag], axis=1)
    return inputs, targets, scales


AUGMENT_MODES = ("none", "sign", "flip", "full")


def augment(hr: np.ndarray, rng: np.random.Generator, mode: str = "sign") -> np.ndarray:
    """Randomly transform each HR image.

    ``sign`` multiplies by +-1, which maps a valid system-matrix row to another
    valid one. ``flip`` adds mirror flips and transposition; ``full`` adds a
    random global phase on top. Flips and arbitrary phases break the
    conjugate-mirror relation real rows obey, so they are opt-in.
    """
    if mode not in AUGMENT_MODES:
        raise ConfigError(f"unknown augment mode {mode!r}")
    if mode == "none":
        return hr
    out = np.empty_like(hr)
    for i, img in enumerate(hr):
        if mode in ("flip", "full"):
            if rng.random() < 0.5:
                img = img[::-1]
            if rng.random() < 0.5:
                img = img[:, ::-1]
            if img.shape[0] == img.shape[1] and rng.random() < 0.5:
                img = img.T
        if mode == "full":
            img = img * np.exp(1j * rng.uniform(0, 2 * np.pi))
        else:
            img = img * (1 if rng.random() < 0.5 else -1)
        out[i] = img
    return out
