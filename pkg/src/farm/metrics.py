"""Estimation quality metrics: NMSE, RMSE, PSNR, and windowed SSIM, plus the
per-altitude report used by the evaluation pipeline.

PSNR and SSIM take the dataset-wide signal variation range r; dB values are
floored so perfect reconstructions stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NMSE_FLOOR = 1e-12          # ratio floor, -120 dB
SSIM_WINDOW_3D = (8, 8, 4)
SSIM_STRIDE_3D = (4, 4, 2)
SSIM_WINDOW_2D = (8, 8)
SSIM_STRIDE_2D = (4, 4)
K1, K2 = 0.01, 0.03


def _check_shapes(truth, pred):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs pred {pred.shape}")
    return truth, pred


def mse(truth, pred) -> float:
    truth, pred = _check_shapes(truth, pred)
    return float(np.mean((truth - pred) ** 2))


def rmse(truth, pred) -> float:
    return float(np.sqrt(mse(truth, pred)))


def nmse(truth, pred) -> tuple[float, float]:
    """Residual energy over ground-truth energy; returns (ratio, dB).

    Not symmetric in its arguments: the denominator is the truth's energy.
    """
    truth, pred = _check_shapes(truth, pred)
    energy = float(np.sum(truth ** 2))
    if energy == 0.0:
        raise ValueError("NMSE undefined for zero-energy ground truth")
    ratio = float(np.sum((truth - pred) ** 2)) / energy
    return ratio, 10.0 * np.log10(max(ratio, NMSE_FLOOR))


def psnr(truth, pred, r: float) -> float:
    """10 log10(r^2 / MSE) with the zero-MSE case floored to stay finite."""
    if r <= 0:
        raise ValueError(f"signal range r must be positive, got {r}")
    m = mse(truth, pred)
    return float(10.0 * np.log10(r ** 2 / max(m, r ** 2 * NMSE_FLOOR)))


def ssim(truth, pred, r: float, window: tuple[int, ...] = SSIM_WINDOW_3D,
         stride: tuple[int, ...] = SSIM_STRIDE_3D,
         k1: float = K1, k2: float = K2) -> float:
    """Mean structural similarity over sliding windows (biased moments).

    Works for any dimensionality matching len(window); the volume must fit at
    least one window along every axis.
    """
    truth, pred = _check_shapes(truth, pred)
    if truth.ndim != len(window):
        raise ValueError(f"window {window} does not match array rank {truth.ndim}")
    if any(s < w for s, w in zip(truth.shape, window)):
        raise ValueError(f"volume {truth.shape} smaller than SSIM window {window}")
    if r <= 0:
        raise ValueError(f"signal range r must be positive, got {r}")
    sub = tuple(slice(None, None, s) for s in stride)
    wx = sliding_window_view(truth, window)[sub]
    wy = sliding_window_view(pred, window)[sub]
    axes = tuple(range(-len(window), 0))
    mu_x = wx.mean(axis=axes)
    mu_y = wy.mean(axis=axes)
    var_x = (wx ** 2).mean(axis=axes) - mu_x ** 2
    var_y = (wy ** 2).mean(axis=axes) - mu_y ** 2
    cov = (wx * wy).mean(axis=axes) - mu_x * mu_y
    c1, c2 = (k1 * r) ** 2, (k2 * r) ** 2
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)
         / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)))
    return float(s.mean())


@dataclass
class MetricsReport:
    """Global metrics plus one row per altitude slice."""

    nmse: float
    nmse_db: float
    rmse: float
    psnr_db: float
    ssim: float
    r: float
    per_height: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def evaluate(pred, truth, r: float) -> MetricsReport:
    """Full report: volume-level metrics and per-height-slice curves."""
    truth, pred = _check_shapes(truth, pred)
    ratio, db = nmse(truth, pred)
    report = MetricsReport(nmse=ratio, nmse_db=db, rmse=rmse(truth, pred),
                           psnr_db=psnr(truth, pred, r),
                           ssim=ssim(truth, pred, r), r=float(r))
    for h in range(truth.shape[2]):
        ts, ps = truth[:, :, h], pred[:, :, h]
        ratio_h, db_h = nmse(ts, ps)
        report.per_height.append({
            "height": h,
            "nmse": ratio_h,
            "nmse_db": db_h,
            "rmse": rmse(ts, ps),
            "psnr_db": psnr(ts, ps, r),
            "ssim": ssim(ts, ps, r, window=SSIM_WINDOW_2D, stride=SSIM_STRIDE_2D),
        })
    return report
