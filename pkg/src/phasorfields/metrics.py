"""Image and depth evaluation metrics."""

from __future__ import annotations

import numpy as np

PSNR_CAP_DB = 99.0
_PSNR_MSE_FLOOR = 1e-10


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for images normalized to peak 1.0; capped at 99 dB."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(-10.0 * np.log10(mse))


def depth_mse(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean squared depth error in m^2 over masked pixels."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    return float(np.mean((pred[mask] - gt[mask]) ** 2))
