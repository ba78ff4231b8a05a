"""Image comparison metrics on float images in [0, 1]."""

from __future__ import annotations

import numpy as np

from .validation import check_same_shape

PSNR_CAP = 99.0


def mse(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, "pred", "gt")
    return float(np.mean((pred - gt) ** 2))


def l1(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, "pred", "gt")
    return float(np.mean(np.abs(pred - gt)))


def psnr(pred, gt) -> float:
    """Peak signal-to-noise ratio in dB, capped for identical images."""
    err = mse(pred, gt)
    if err <= 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / err), PSNR_CAP))


def _box_filter(img: np.ndarray, win: int) -> np.ndarray:
    """Mean over win x win windows (valid positions only)."""
    s = np.cumsum(np.cumsum(img, axis=0), axis=1)
    s = np.pad(s, [(1, 0), (1, 0)] + [(0, 0)] * (img.ndim - 2))
    out = (
        s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]
    )
    return out / (win * win)


def ssim(pred, gt, win: int = 7, c1: float = 0.01**2, c2: float = 0.03**2) -> float:
    """Mean structural similarity with a uniform window.

    Images may be (H, W) or (H, W, C); channels are averaged.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, "pred", "gt")
    if pred.ndim == 2:
        pred = pred[..., None]
        gt = gt[..., None]
    if pred.shape[0] < win or pred.shape[1] < win:
        raise ValueError(f"images smaller than the {win}x{win} ssim window")
    mu_p = _box_filter(pred, win)
    mu_g = _box_filter(gt, win)
    var_p = _box_filter(pred * pred, win) - mu_p**2
    var_g = _box_filter(gt * gt, win) - mu_g**2
    cov = _box_filter(pred * gt, win) - mu_p * mu_g
    num = (2.0 * mu_p * mu_g + c1) * (2.0 * cov + c2)
    den = (mu_p**2 + mu_g**2 + c1) * (var_p + var_g + c2)
    return float(np.mean(num / den))
