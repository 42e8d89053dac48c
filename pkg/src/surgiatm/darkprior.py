"""Dark-channel machinery and the classic DCP restorer.

The windowed minimum is the hot path for real-time use, so it runs as a
separable sliding minimum (column pass then row pass) built on
logarithmic width doubling — O(log z) whole-array vectorized passes per
axis instead of per-pixel or per-line loops. Borders are replicated to
avoid artificial dark halos at frame edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DomainError, ShapeError
from .imgcore import ImageBuffer, ScalarField

_AIRLIGHT_FLOOR = 1e-3


@dataclass(frozen=True)
class DcpConfig:
    """Window size, transmission floor, and airlight selection fraction."""

    z: int = 15
    t0: float = 0.1
    airlight_fraction: float = 0.001

    def __post_init__(self) -> None:
        _check_window(self.z)
        if not 0.0 < self.t0 < 1.0:
            raise ArgumentError(f"t0 must lie in (0,1), got {self.t0}")
        if not 0.0 < self.airlight_fraction <= 1.0:
            raise ArgumentError(
                f"airlight_fraction must lie in (0,1], got {self.airlight_fraction}"
            )


@dataclass(frozen=True)
class Airlight:
    """Per-channel atmospheric light; strictly positive so division is defined."""

    a: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.a) != 3:
            raise ArgumentError(f"airlight needs 3 channels, got {len(self.a)}")
        for v in self.a:
            if not 0.0 < v <= 1.0:
                raise DomainError(f"airlight component out of (0,1]: {v}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.a, dtype=np.float64)


def _check_window(z: int) -> None:
    if z < 1 or z % 2 == 0:
        raise ArgumentError(f"window size must be odd and >= 1, got {z}")


def _sliding_min_axis(arr: np.ndarray, z: int, axis: int) -> np.ndarray:
    """Sliding minimum of length z along one axis, edges replicated.

    Logarithmic width doubling: after padding, repeatedly combine the
    running minima with a shifted copy of themselves, doubling the
    covered width each pass, then close the gap to z with one overlapped
    combine (idempotence of min makes the overlap harmless). Every pass
    is a single whole-array vectorized minimum, so the cost is
    O(log z) passes independent of image shape.
    """
    r = z // 2
    n = arr.shape[axis]
    if axis == 0:
        p = np.empty((n + 2 * r, arr.shape[1]), arr.dtype)
        p[:r] = arr[0]
        p[r:r + n] = arr
        p[r + n:] = arr[-1]
    else:
        p = np.empty((arr.shape[0], n + 2 * r), arr.dtype)
        p[:, :r] = arr[:, :1]
        p[:, r:r + n] = arr
        p[:, r + n:] = arr[:, -1:]

    def shrink(a: np.ndarray, k: int) -> np.ndarray:
        if axis == 0:
            return np.minimum(a[:a.shape[0] - k], a[k:])
        return np.minimum(a[:, :a.shape[1] - k], a[:, k:])

    w = 1
    while 2 * w <= z:
        p = shrink(p, w)
        w *= 2
    if w < z:
        p = shrink(p, z - w)
    return p


def _sliding_min_2d(arr: np.ndarray, z: int) -> np.ndarray:
    if z == 1:
        return arr.copy()
    return _sliding_min_axis(_sliding_min_axis(arr, z, 0), z, 1)


def _channel_min(data: np.ndarray) -> np.ndarray:
    # Chained pairwise minima beat a reduction over the short last axis.
    out = np.minimum(data[:, :, 0], data[:, :, 1])
    for c in range(2, data.shape[2]):
        np.minimum(out, data[:, :, c], out=out)
    return out


def window_min(field: ScalarField, z: int) -> ScalarField:
    """Minimum over the z x z neighborhood of each pixel, borders replicated."""
    _check_window(z)
    return ScalarField._trusted(_sliding_min_2d(field.data, z))


def dark_channel(img: ImageBuffer, a: Airlight, z: int) -> ScalarField:
    """Windowed channel-minimum of the airlight-normalized image, in [0,1]."""
    _check_window(z)
    if img.channels != 3:
        raise ShapeError(f"dark_channel needs 3 channels, got {img.channels}")
    ratio_min = _channel_min(img.data / a.as_array())
    d = _sliding_min_2d(ratio_min, z)
    return ScalarField._trusted(np.clip(d, 0.0, 1.0))


def denorm_dark_channel(img: ImageBuffer, z: int) -> ScalarField:
    """Windowed channel-minimum of raw intensities; no airlight involved."""
    _check_window(z)
    if img.channels != 3:
        raise ShapeError(f"denorm_dark_channel needs 3 channels, got {img.channels}")
    return ScalarField._trusted(_sliding_min_2d(_channel_min(img.data), z))


def estimate_airlight(img: ImageBuffer, z: int, fraction: float) -> Airlight:
    """Mean color of the brightest dark-channel pixels.

    Pixels are ranked by the airlight-free dark channel; the per-channel
    mean over the top `fraction` is floored at 1e-3 so downstream division
    stays defined. The mean (rather than the max) keeps the estimate robust
    to specular highlights.
    """
    if not 0.0 < fraction <= 1.0:
        raise ArgumentError(f"fraction must lie in (0,1], got {fraction}")
    dd = denorm_dark_channel(img, z).data.ravel()
    n = max(1, int(round(fraction * dd.size)))
    # Stable sort keeps tie handling deterministic across runs.
    top = np.argsort(-dd, kind="stable")[:n]
    pixels = img.data.reshape(-1, 3)[top]
    a = np.maximum(pixels.mean(axis=0), _AIRLIGHT_FLOOR)
    return Airlight((float(a[0]), float(a[1]), float(a[2])))


def dcp_restore(
    img: ImageBuffer, cfg: DcpConfig, airlight: Airlight | None = None
) -> ImageBuffer:
    """Invert the scattering model with a DCP transmission estimate.

    t = max(1 - D, t0) and J = (I - A) / t + A, evaluated in the
    algebraically equal form (I - A*(1-t)) / t so smoke-free pixels
    (t == 1) reproduce the input bitwise. Output is clamped to [0,1].
    """
    if img.channels != 3:
        raise ShapeError(f"dcp_restore needs 3 channels, got {img.channels}")
    a = airlight if airlight is not None else estimate_airlight(
        img, cfg.z, cfg.airlight_fraction
    )
    d = dark_channel(img, a, cfg.z)
    t = np.maximum(1.0 - d.data, cfg.t0)[:, :, None]
    j = (img.data - a.as_array() * (1.0 - t)) / t
    return ImageBuffer._trusted(np.clip(j, 0.0, 1.0))
