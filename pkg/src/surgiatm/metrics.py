"""Full-reference image quality: RMSE, PSNR, single-scale SSIM, CIEDE2000.

All four operate on unit-range float rasters. PSNR is defined directly
off RMSE (-20*log10) and capped at 99 dB only for bitwise-identical
inputs, so the identity psnr == -20*log10(rmse) holds everywhere else.
SSIM follows the classic single-scale recipe on BT.601 luma: 11x11
Gaussian window (sigma 1.5), K1=0.01, K2=0.03, averaged over fully valid
windows only. The color difference is the CIEDE2000 formula evaluated on
D65 Lab values and averaged over pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve

from .errors import ArgumentError, ShapeError
from .imgcore import ImageBuffer, srgb_to_lab

_PSNR_CAP = 99.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class MetricReport:
    """One row of the evaluation table."""

    ciede2000: float
    psnr: float
    rmse: float
    ssim: float

    def as_dict(self) -> dict[str, float]:
        return {
            "ciede2000": self.ciede2000,
            "psnr": self.psnr,
            "rmse": self.rmse,
            "ssim": self.ssim,
        }


def _check_pair(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def rmse(a: ImageBuffer, b: ImageBuffer) -> float:
    """Root-mean-square error over all pixels and channels."""
    _check_pair(a, b)
    diff = a.data - b.data
    return float(np.sqrt(np.mean(diff * diff)))


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB; 99.0 for identical images."""
    r = rmse(a, b)
    if r == 0.0:
        return _PSNR_CAP
    return float(-20.0 * np.log10(r))


def _luma(img: ImageBuffer) -> np.ndarray:
    if img.channels == 1:
        return img.data[:, :, 0]
    return img.data @ _LUMA


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _window_mean(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Separable, fully valid windows only: no border invention.
    return convolve(convolve(x, k[None, :], mode="valid"), k[:, None], mode="valid")


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean structural similarity of the luma channels.

    Uses Gaussian-weighted local statistics and averages the similarity
    map over windows that fit entirely inside the frame, so images
    smaller than 11x11 are rejected.
    """
    _check_pair(a, b)
    h, w = a.data.shape[:2]
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ArgumentError(
            f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} pixels, got {h}x{w}"
        )
    x = _luma(a)
    y = _luma(b)
    k = _gaussian_kernel_1d(_SSIM_WINDOW, _SSIM_SIGMA)

    mu_x = _window_mean(x, k)
    mu_y = _window_mean(y, k)
    var_x = _window_mean(x * x, k) - mu_x * mu_x
    var_y = _window_mean(y * y, k) - mu_y * mu_y
    cov = _window_mean(x * y, k) - mu_x * mu_y

    c1 = _SSIM_K1 * _SSIM_K1
    c2 = _SSIM_K2 * _SSIM_K2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ciede2000_lab(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 color difference for arrays of Lab triples (last axis 3).

    Implements the complete formula with the chroma-dependent a'
    rescaling, hue rotation term, and the standard handling of neutral
    pixels (hue angle 0 when chroma vanishes, hue sums/differences
    collapsing when either chroma is zero). Weighting factors kL, kC,
    kH are all 1.
    """
    l1, a1, b1 = np.moveaxis(np.asarray(lab1, dtype=np.float64), -1, 0)
    l2, a2, b2 = np.moveaxis(np.asarray(lab2, dtype=np.float64), -1, 0)

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    cbar = 0.5 * (c1 + c2)
    pow7 = cbar**7
    g = 0.5 * (1.0 - np.sqrt(pow7 / (pow7 + 25.0**7)))

    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where(c1p == 0.0, 0.0, h1p)
    h2p = np.where(c2p == 0.0, 0.0, h2p)

    dl = l2 - l1
    dc = c2p - c1p

    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(c1p * c2p == 0.0, 0.0, dh)
    dhh = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(0.5 * dh))

    lbar = 0.5 * (l1 + l2)
    cbarp = 0.5 * (c1p + c2p)

    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbar = np.where(habs <= 180.0, 0.5 * hsum,
                    np.where(hsum < 360.0, 0.5 * (hsum + 360.0),
                             0.5 * (hsum - 360.0)))
    hbar = np.where(c1p * c2p == 0.0, hsum, hbar)

    t = (1.0
         - 0.17 * np.cos(np.radians(hbar - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbar))
         + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0)))

    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    pow7p = cbarp**7
    rc = 2.0 * np.sqrt(pow7p / (pow7p + 25.0**7))
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc

    sl = 1.0 + 0.015 * (lbar - 50.0) ** 2 / np.sqrt(20.0 + (lbar - 50.0) ** 2)
    sc = 1.0 + 0.045 * cbarp
    sh = 1.0 + 0.015 * cbarp * t

    return np.sqrt(
        (dl / sl) ** 2
        + (dc / sc) ** 2
        + (dhh / sh) ** 2
        + rt * (dc / sc) * (dhh / sh)
    )


def ciede2000(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean CIEDE2000 difference between two frames, via D65 Lab."""
    _check_pair(a, b)
    if a.channels != 3:
        raise ShapeError(f"ciede2000 needs 3-channel frames, got {a.channels}")
    return float(np.mean(ciede2000_lab(srgb_to_lab(a), srgb_to_lab(b))))


def metric_report(pred: ImageBuffer, truth: ImageBuffer) -> MetricReport:
    """All four metrics for a prediction against its reference."""
    return MetricReport(
        ciede2000=ciede2000(pred, truth),
        psnr=psnr(pred, truth),
        rmse=rmse(pred, truth),
        ssim=ssim(pred, truth),
    )
