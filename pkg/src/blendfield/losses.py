"""Training losses with hand-written gradients.

Color and mask terms are mean absolute errors (means, not sums, so loss
weights are batch-size independent). The patch term is a pluggable
dissimilarity; the built-in default compares multi-scale patch statistics
(means, variances, covariance), which is zero for identical patches,
symmetric, and differentiable almost everywhere.
"""

from __future__ import annotations

import numpy as np

from .validation import check_same_shape


def loss_color(pred, gt):
    """Mean |pred - gt| over rays and channels; returns (value, dL/dpred)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    check_same_shape(pred, gt, "pred", "gt")
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    value = float(np.mean(np.abs(diff)))
    grad = (np.sign(diff) / diff.size).astype(pred.dtype)
    return value, grad


def loss_mask(pred, gt):
    """Mean |pred - gt| over one channel; returns (value, dL/dpred)."""
    return loss_color(pred, gt)


def _pool2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    h2, w2 = h // 2, w // 2
    v = img[: h2 * 2, : w2 * 2]
    return 0.25 * (
        v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2]
    )


def _unpool2(grad: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=grad.dtype)
    g = 0.25 * grad
    h2, w2 = grad.shape[:2]
    out[0 : h2 * 2 : 2, 0 : w2 * 2 : 2] = g
    out[1 : h2 * 2 : 2, 0 : w2 * 2 : 2] = g
    out[0 : h2 * 2 : 2, 1 : w2 * 2 : 2] = g
    out[1 : h2 * 2 : 2, 1 : w2 * 2 : 2] = g
    return out


class StructuralPatchLoss:
    """Multi-scale structural dissimilarity over whole patches.

    Per scale and channel, compares patch mean, variance, and covariance
    through the usual similarity ratio; the loss is the mean of
    (1 - similarity) over channels and scales. Scales halve the patch by
    average pooling down to 4 pixels a side.
    """

    def __init__(self, c1: float = 0.01**2, c2: float = 0.03**2,
                 max_scales: int = 3):
        self.c1 = c1
        self.c2 = c2
        self.max_scales = max_scales

    def _n_scales(self, side: int) -> int:
        n = 1
        while n < self.max_scales and side // (2**n) >= 4:
            n += 1
        return n

    def forward(self, pred, gt):
        """Returns (value, cache). Patches are (W, W, 3) float arrays."""
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        check_same_shape(pred, gt, "pred patch", "gt patch")
        n_scales = self._n_scales(min(pred.shape[0], pred.shape[1]))
        levels = []
        p, g = pred, gt
        total = 0.0
        for s in range(n_scales):
            n = p.shape[0] * p.shape[1]
            mu_p = p.mean(axis=(0, 1))
            mu_g = g.mean(axis=(0, 1))
            dp = p - mu_p
            dg = g - mu_g
            var_p = (dp * dp).mean(axis=(0, 1))
            var_g = (dg * dg).mean(axis=(0, 1))
            cov = (dp * dg).mean(axis=(0, 1))
            a1 = 2.0 * mu_p * mu_g + self.c1
            b1 = mu_p**2 + mu_g**2 + self.c1
            a2 = 2.0 * cov + self.c2
            b2 = var_p + var_g + self.c2
            sim = (a1 * a2) / (b1 * b2)
            total += float(np.mean(1.0 - sim))
            levels.append({
                "p": p, "g": g, "n": n, "mu_p": mu_p, "mu_g": mu_g,
                "dp": dp, "dg": dg, "a1": a1, "b1": b1, "a2": a2, "b2": b2,
                "sim": sim,
            })
            if s + 1 < n_scales:
                p = _pool2(p)
                g = _pool2(g)
        value = total / n_scales
        return value, {"levels": levels, "n_scales": n_scales,
                       "shape": pred.shape}

    def backward(self, cache):
        """dL/d(pred patch) for the value returned by forward."""
        levels = cache["levels"]
        n_scales = cache["n_scales"]
        n_ch = levels[0]["p"].shape[2]
        scale_w = -1.0 / (n_scales * n_ch)  # d(1 - sim) distributed over means
        grad = None
        for lv in reversed(levels):
            n = lv["n"]
            b1b2 = lv["b1"] * lv["b2"]
            # d sim / d mu_p, d sim / d cov, d sim / d var_p (per channel)
            d_mu = (2.0 * lv["mu_g"] * lv["a2"]) / b1b2 - lv["sim"] * (
                2.0 * lv["mu_p"]
            ) / lv["b1"]
            d_cov = 2.0 * lv["a1"] / b1b2
            d_var = -lv["sim"] / lv["b2"]
            # Chain to pixels: mu, cov, var are means over the patch.
            g = scale_w * (
                d_mu / n
                + d_cov * lv["dg"] / n
                + d_var * 2.0 * lv["dp"] / n
            )
            if grad is None:
                grad = g
            else:
                grad = _unpool2(grad, g.shape) + g
        return grad


def loss_patch(pred, gt, patch_loss: StructuralPatchLoss | None = None) -> float:
    """Scalar patch dissimilarity with the built-in default measure."""
    pl = patch_loss or StructuralPatchLoss()
    value, _ = pl.forward(pred, gt)
    return value
