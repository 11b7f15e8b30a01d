"""Image and geometry metrics for inversion results."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from skimage.metrics import structural_similarity

from .errors import InvalidArgument

PSNR_CAP = 99.0


@dataclass
class MetricsReport:
    mse: float
    psnr: float
    ssim: float
    geo_err: float

    def as_dict(self) -> dict:
        return asdict(self)


def _np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def mse(pred, gt) -> float:
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.mean((pred - gt) ** 2))


def psnr(pred, gt) -> float:
    err = mse(pred, gt)
    return PSNR_CAP if err <= 0 else min(PSNR_CAP, -10.0 * math.log10(err))


def ssim(pred, gt) -> float:
    """Gaussian-window SSIM (sigma 1.5, 11 taps, K1=0.01, K2=0.03) on [0, 1] images."""
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"shapes differ: {pred.shape} vs {gt.shape}")
    return float(
        structural_similarity(
            pred, gt, data_range=1.0, channel_axis=-1 if pred.ndim == 3 else None,
            gaussian_weights=True, sigma=1.5, use_sample_covariance=False, K1=0.01, K2=0.03,
        )
    )


def surface_depth(depth, opacity, tau: float = 0.5) -> np.ndarray:
    """Depth with background pixels (opacity < tau) set to 0, the convention of stored depth maps.

    The normalized depth of a nearly empty ray is numerically arbitrary, so
    geometry comparisons use this form.
    """
    depth, opacity = _np(depth), _np(opacity)
    return np.where(opacity >= tau, depth, 0.0)


def standardize(depth) -> np.ndarray:
    depth = _np(depth)
    std = depth.std()
    return (depth - depth.mean()) / std if std > 0 else depth - depth.mean()


def geo_err(pred_depth, gt_depth) -> float:
    """Mean squared difference of depth maps standardized to zero mean and unit variance."""
    pred_depth, gt_depth = _np(pred_depth), _np(gt_depth)
    if pred_depth.shape != gt_depth.shape:
        raise InvalidArgument(f"depth shapes differ: {pred_depth.shape} vs {gt_depth.shape}")
    return float(np.mean((standardize(pred_depth) - standardize(gt_depth)) ** 2))


def eval_metrics(pred, gt, pred_depth, gt_depth) -> MetricsReport:
    return MetricsReport(mse(pred, gt), psnr(pred, gt), ssim(pred, gt), geo_err(pred_depth, gt_depth))


def write_metrics_csv(path, rows) -> None:
    """One row per (scene, yaw) with the report columns."""
    fields = ["scene", "yaw", "mse", "psnr", "ssim", "geo_err"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
