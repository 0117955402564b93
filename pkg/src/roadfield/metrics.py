"""Render-quality and depth-accuracy metrics.

Depth RMSE comes in sigma-trimmed variants: recomputed over the pixels
whose error magnitude falls within k standard deviations of the error
distribution. All three values (untrimmed, @1 sigma, @2 sigma) are always
reported together since trimming semantics are easy to misread.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 99.0
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_SSIM_RADIUS = 5  # 11x11 window


def psnr(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; capped at 99."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image dimensions differ")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    return img


def _gaussian_taps(radius: int = _SSIM_RADIUS, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _windowed_mean(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = correlate1d(img, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    r = _SSIM_RADIUS
    return out[r:-r, r:-r]  # crop to fully covered (valid) windows


def ssim(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Mean local structural similarity over valid 11x11 Gaussian windows.

    Inputs are converted to luma first; sigma of the window is 1.5 and the
    stabilizers are C1 = 0.01^2, C2 = 0.03^2 on the [0, 1] range.
    """
    a = _luma(img_a)
    b = _luma(img_b)
    if a.shape != b.shape:
        raise ValueError("image dimensions differ")
    if min(a.shape) < 2 * _SSIM_RADIUS + 1:
        raise ValueError("image smaller than the 11x11 SSIM window")
    taps = _gaussian_taps()
    mu_a = _windowed_mean(a, taps)
    mu_b = _windowed_mean(b, taps)
    var_a = _windowed_mean(a * a, taps) - mu_a ** 2
    var_b = _windowed_mean(b * b, taps) - mu_b ** 2
    cov = _windowed_mean(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float(np.mean(num / den))


def depth_rmse(pred: np.ndarray, gt: np.ndarray, validity: np.ndarray,
               sigma_k: float | None = None) -> float:
    """RMSE in meters over valid pixels, optionally sigma-trimmed.

    With sigma_k = k, the error set is reduced to |error| <= k * std(error)
    before recomputing. A zero-spread error distribution is returned
    untrimmed (every error is the same, trimming is meaningless).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    validity = np.asarray(validity, dtype=bool)
    if not (pred.shape == gt.shape == validity.shape):
        raise ValueError("shape mismatch between prediction, truth and validity")
    err = (pred - gt)[validity]
    if err.size == 0:
        return float("nan")
    if sigma_k is not None:
        spread = float(np.std(err))
        if spread > 0:
            err = err[np.abs(err) <= sigma_k * spread]
            if err.size == 0:
                return float("nan")
    return float(np.sqrt(np.mean(err ** 2)))


def depth_rmse_summary(pred, gt, validity) -> dict[str, float]:
    return {
        "rmse": depth_rmse(pred, gt, validity),
        "rmse_1s": depth_rmse(pred, gt, validity, sigma_k=1.0),
        "rmse_2s": depth_rmse(pred, gt, validity, sigma_k=2.0),
    }


def metrics_table(rows: list[dict], title: str | None = None) -> str:
    """Fixed-column text table; the perceptual-similarity column is always
    emitted as n/a (needs a pretrained network, deliberately unsupported)."""
    header = f"{'name':<24}{'PSNR':>8}{'SSIM':>8}{'LPIPS':>8}" \
             f"{'RMSE[m]':>10}{'RMSE@1s':>10}{'RMSE@2s':>10}"
    lines = [] if title is None else [title]
    lines.append(header)

    def fmt(x) -> str:
        if x is None or (isinstance(x, float) and np.isnan(x)):
            return "n/a"
        return f"{x:.3f}"

    for row in rows:
        lines.append(
            f"{row.get('name', '-'):<24}"
            f"{fmt(row.get('psnr')):>8}"
            f"{fmt(row.get('ssim')):>8}"
            f"{'n/a':>8}"
            f"{fmt(row.get('rmse')):>10}"
            f"{fmt(row.get('rmse_1s')):>10}"
            f"{fmt(row.get('rmse_2s')):>10}"
        )
    return "\n".join(lines) + "\n"
