"""nRMSE for recovered system matrices and pSNR for reconstructed images."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import ComplexImage, SystemMatrix
from .errors import ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    per_row: np.ndarray | None = None

    def to_json(self, **extra) -> str:
        """One JSON line; infinities serialize as the string ``"inf"``."""
        rec = {"name": self.name, "value": _jsonable(self.value), **extra}
        if self.per_row is not None:
            rec["per_row"] = [_jsonable(v) for v in self.per_row]
        return json.dumps(rec)


def _jsonable(v: float):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _array(x) -> np.ndarray:
    if isinstance(x, SystemMatrix):
        return x.data
    if isinstance(x, ComplexImage):
        return x.values
    return np.asarray(x)


def nrmse(pred, gt) -> MetricReport:
    """Frobenius residual over Frobenius norm of the ground truth.

    For system matrices the per-row breakdown is also filled in.
    """
    p, g = _array(pred), _array(gt)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
    ref = np.linalg.norm(g)
    if ref == 0:
        raise UndefinedMetricError("nRMSE undefined for an all-zero reference")
    per_row = None
    if isinstance(gt, SystemMatrix):
        row_ref = np.linalg.norm(g, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_row = np.linalg.norm(p - g, axis=1) / row_ref
    return MetricReport("nrmse", float(np.linalg.norm(p - g) / ref), per_row)


def mean_row_nrmse(pred: SystemMatrix | np.ndarray, gt: SystemMatrix | np.ndarray) -> float:
    """Average of per-frequency-component nRMSE (rows are images)."""
    p, g = _array(pred), _array(gt)
    p = p.reshape(p.shape[0], -1)
    g = g.reshape(g.shape[0], -1)
    ref = np.linalg.norm(g, axis=1)
    if np.any(ref == 0):
        raise UndefinedMetricError("a reference row is all zero")
    return float(np.mean(np.linalg.norm(p - g, axis=1) / ref))


def psnr(pred_img, ref_img) -> MetricReport:
    p, r = np.asarray(pred_img, dtype=float), np.asarray(ref_img, dtype=float)
    if p.shape != r.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {r.shape}")
    peak = np.abs(r).max() if r.size else 0.0
    if peak == 0:
        raise UndefinedMetricError("pSNR undefined for an all-zero reference")
    resid = np.linalg.norm(p - r)
    if resid == 0:
        return MetricReport("psnr", math.inf)
    return MetricReport("psnr", float(20 * np.log10(math.sqrt(r.size) * peak / resid)))
