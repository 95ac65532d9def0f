"""System-matrix domain types, RIM encoding and grid down-sampling.

A system matrix row k holds the response of frequency component k at
every grid position. Rows are reshaped row-major onto an ``ny x nx`` grid
to form frequency-component images, which is how every learning and
interpolation routine in this package consumes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidDataError, ShapeError

ALLOWED_SCALES = (1, 2, 4, 8, 16)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Regular 2D sampling grid. ``fov_x``/``fov_y`` are in millimetres."""

    nx: int
    ny: int
    fov_x: float = 32.0
    fov_y: float = 32.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ShapeError(f"grid dimensions must be positive integers, got {self.nx}x{self.ny}")
        if not (np.isfinite(self.fov_x) and np.isfinite(self.fov_y)) or self.fov_x <= 0 or self.fov_y <= 0:
            raise InvalidDataError("field of view must be finite and positive")

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def pitch(self) -> tuple[float, float]:
        return (self.fov_x / self.nx, self.fov_y / self.ny)

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates (mm), each of shape ``(ny, nx)``, centred on 0."""
        x = -self.fov_x / 2 + (np.arange(self.nx) + 0.5) * self.fov_x / self.nx
        y = -self.fov_y / 2 + (np.arange(self.ny) + 0.5) * self.fov_y / self.ny
        return np.meshgrid(x, y)

    def coarsen(self, s: int) -> "Grid":
        if self.nx % s or self.ny % s:
            raise ShapeError(f"grid {self.ny}x{self.nx} not divisible by scale {s}")
        return Grid(self.nx // s, self.ny // s, self.fov_x, self.fov_y)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "fov_x": self.fov_x, "fov_y": self.fov_y}


@dataclass(frozen=True)
class FreqDescriptor:
    index: int
    freq_hz: float
    channel: int
    order: tuple[int, int] | None = None  # mixing indices (m, n) for m*f_D + n*f_E

    def to_dict(self) -> dict:
        d = {"index": self.index, "freq_hz": self.freq_hz, "channel": self.channel}
        if self.order is not None:
            d["order"] = list(self.order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FreqDescriptor":
        order = tuple(d["order"]) if d.get("order") is not None else None
        return cls(int(d["index"]), float(d["freq_hz"]), int(d["channel"]), order)


@dataclass(frozen=True)
class SystemMatrix:
    grid: Grid
    freqs: tuple[FreqDescriptor, ...]
    data: np.ndarray
    row_snr: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise ShapeError("system matrix data must be 2D (K x N)")
        if data.shape[0] != len(self.freqs):
            raise ShapeError(f"{data.shape[0]} rows but {len(self.freqs)} frequency descriptors")
        if data.shape[1] != self.grid.n:
            raise ShapeError(f"{data.shape[1]} columns but grid has {self.grid.n} positions")
        if not np.all(np.isfinite(data)):
            raise InvalidDataError("system matrix contains non-finite entries")
        object.__setattr__(self, "freqs", tuple(self.freqs))
        object.__setattr__(self, "data", _frozen(data))
        if self.row_snr is not None:
            snr = np.asarray(self.row_snr, dtype=float)
            if snr.shape != (data.shape[0],) or np.any(snr < 0):
                raise InvalidDataError("row_snr must be a nonnegative vector of length K")
            object.__setattr__(self, "row_snr", _frozen(snr))

    @property
    def k(self) -> int:
        return self.data.shape[0]

    def images(self) -> np.ndarray:
        """All rows as a ``(K, ny, nx)`` complex stack (a view)."""
        return self.data.reshape(self.k, self.grid.ny, self.grid.nx)

    def with_data(self, data: np.ndarray, grid: Grid | None = None) -> "SystemMatrix":
        grid = grid or self.grid
        data = np.asarray(data).reshape(len(self.freqs), grid.n)
        return SystemMatrix(grid, self.freqs, data, self.row_snr)

    def select(self, rows: Sequence[int]) -> "SystemMatrix":
        rows = list(rows)
        snr = None if self.row_snr is None else self.row_snr[rows]
        return SystemMatrix(self.grid, tuple(self.freqs[r] for r in rows), self.data[rows], snr)

    @classmethod
    def from_images(cls, grid: Grid, freqs, images: np.ndarray, row_snr=None) -> "SystemMatrix":
        images = np.asarray(images)
        return cls(grid, tuple(freqs), images.reshape(images.shape[0], -1), row_snr)


@dataclass(frozen=True)
class ComplexImage:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != self.grid.shape:
            raise ShapeError(f"image shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidDataError("image contains non-finite entries")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True)
class RimImage:
    """Real, imaginary and magnitude channels of a normalized complex image."""

    grid: Grid
    channels: np.ndarray  # (3, ny, nx)
    scale: float = 1.0

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.shape != (3, *self.grid.shape):
            raise ShapeError(f"RIM channels must have shape (3, {self.grid.ny}, {self.grid.nx})")
        if not np.all(np.isfinite(ch)) or not np.isfinite(self.scale) or self.scale <= 0:
            raise InvalidDataError("RIM image must be finite with positive scale")
        object.__setattr__(self, "channels", _frozen(ch))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def real(self) -> np.ndarray:
        return self.channels[0]

    @property
    def imag(self) -> np.ndarray:
        return self.channels[1]

    @property
    def magnitude(self) -> np.ndarray:
        return self.channels[2]


def check_scale(s: int) -> int:
    if s not in ALLOWED_SCALES:
        raise ShapeError(f"scale factor must be one of {ALLOWED_SCALES}, got {s}")
    return int(s)


def rim_channels(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalize a complex array by its peak modulus and stack (re, im, |.|).

    Works on any leading shape; returns the stacked channels on axis 0 and
    the scale. An all-zero input gets scale 1.
    """
    values = np.asarray(values, dtype=np.complex128)
    if not np.all(np.isfinite(values)):
        raise InvalidDataError("cannot encode non-finite values")
    mag = np.abs(values)
    scale = float(mag.max()) if mag.size else 0.0
    if scale == 0.0:
        scale = 1.0
    v = values / scale
    return np.stack([v.real, v.imag, mag / scale]), scale


def rim_encode(img: ComplexImage) -> RimImage:
    channels, scale = rim_channels(img.values)
    return RimImage(img.grid, channels, scale)


def rim_decode(rim: RimImage) -> ComplexImage:
    # magnitude channel is auxiliary and deliberately ignored
    return ComplexImage(rim.grid, (rim.real + 1j * rim.imag) * rim.scale)


def downsample_array(values: np.ndarray, s: int) -> np.ndarray:
    """Keep every ``s``-th pixel along the last two axes, starting at index 0."""
    ny, nx = values.shape[-2:]
    if ny % s or nx % s:
        raise ShapeError(f"image {ny}x{nx} not divisible by scale {s}")
    return values[..., ::s, ::s]


def downsample(img: ComplexImage, s: int) -> ComplexImage:
    s = check_scale(s)
    return ComplexImage(img.grid.coarsen(s), downsample_array(img.values, s))


def downsample_sm(sm: SystemMatrix, s: int) -> SystemMatrix:
    s = check_scale(s)
    low = downsample_array(sm.images(), s)
    return SystemMatrix.from_images(sm.grid.coarsen(s), sm.freqs, low, sm.row_snr)


def sm_row_to_image(sm: SystemMatrix, k: int) -> ComplexImage:
    if not 0 <= k < sm.k:
        raise IndexError(f"frequency index {k} out of range for K={sm.k}")
    return ComplexImage(sm.grid, sm.data[k].reshape(sm.grid.shape))


def image_to_row(img: ComplexImage) -> np.ndarray:
    return img.values.reshape(-1).copy()
