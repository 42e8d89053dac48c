"""Error statistics: heavy-tailed fits, divergences, and the optimal gate.

Restoration residuals are far better described by a Laplace law than a
Gaussian one, and the mixing analysis below exploits that: given two
experts whose per-bin errors follow Laplace(mu_i, b_i), the convex blend
weight minimizing the expected squared error of the mix has the closed
form implemented in `optimal_gate`. The rest of the module supplies the
fitting, histogram-divergence, and binning machinery used to measure how
well the cheap 1 - dark-channel proxy tracks that ideal weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf

from .errors import ArgumentError, EstimationError, ShapeError
from .imgcore import ScalarField

_SCALE_FLOOR = 1e-9


@dataclass(frozen=True)
class LaplaceParams:
    mu: float
    b: float


@dataclass(frozen=True)
class GaussParams:
    mu: float
    sigma: float


def _clean_samples(samples: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size < 2:
        raise EstimationError(f"{what} needs at least 2 samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{what} received non-finite samples")
    if arr.min() == arr.max():
        raise EstimationError(f"{what} is degenerate: all samples equal")
    return arr


def fit_laplace(samples: np.ndarray) -> LaplaceParams:
    """Maximum-likelihood Laplace fit.

    The location is the sample median — taken as the lower of the two
    middle order statistics for even counts so the estimate is always an
    observed value — and the scale is the mean absolute deviation about
    it, floored at 1e-9.
    """
    arr = _clean_samples(samples, "laplace fit")
    mu = float(np.sort(arr)[(arr.size - 1) // 2])
    b = max(float(np.mean(np.abs(arr - mu))), _SCALE_FLOOR)
    return LaplaceParams(mu=mu, b=b)


def fit_gauss(samples: np.ndarray) -> GaussParams:
    """Maximum-likelihood Gaussian fit: mean and population std (ddof=0)."""
    arr = _clean_samples(samples, "gaussian fit")
    mu = float(np.mean(arr))
    sigma = max(float(np.std(arr)), _SCALE_FLOOR)
    return GaussParams(mu=mu, sigma=sigma)


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence between two histograms, in bits.

    Both inputs must be same-length probability vectors (sums within
    1e-9 of 1). Uses the convention 0*log(0) = 0; the value lies in
    [0, 1] and hits 1.0 exactly for disjoint supports.
    """
    pa = np.asarray(p, dtype=np.float64).ravel()
    qa = np.asarray(q, dtype=np.float64).ravel()
    if pa.size != qa.size:
        raise ArgumentError(f"histogram lengths differ: {pa.size} vs {qa.size}")
    if pa.size == 0:
        raise ArgumentError("histograms are empty")
    if pa.min() < 0.0 or qa.min() < 0.0:
        raise ArgumentError("histogram masses must be nonnegative")
    if abs(pa.sum() - 1.0) > 1e-9 or abs(qa.sum() - 1.0) > 1e-9:
        raise ArgumentError("histograms must each sum to 1 within 1e-9")
    m = 0.5 * (pa + qa)

    def _kl_to_mid(x: np.ndarray) -> float:
        mask = x > 0.0
        return float(np.sum(x[mask] * np.log2(x[mask] / m[mask])))

    return max(0.0, 0.5 * _kl_to_mid(pa) + 0.5 * _kl_to_mid(qa))


def _laplace_cdf(x: np.ndarray, p: LaplaceParams) -> np.ndarray:
    z = (x - p.mu) / p.b
    return np.where(z < 0.0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-z))


def _gauss_cdf(x: np.ndarray, p: GaussParams) -> np.ndarray:
    return 0.5 * (1.0 + erf((x - p.mu) / (p.sigma * np.sqrt(2.0))))


def distribution_fit_report(errors: np.ndarray, bins: int = 50) -> dict[str, float]:
    """How Laplace-like vs Gauss-like a residual sample is.

    Fits both families, discretizes each fitted density onto the
    empirical histogram's bins via CDF differences (renormalized to the
    covered range), and reports the JS divergence to the empirical
    histogram for each: keys `js_laplace` and `js_gauss`. Lower is a
    better fit.
    """
    if bins < 2:
        raise ArgumentError(f"need at least 2 bins, got {bins}")
    arr = np.asarray(errors, dtype=np.float64).ravel()
    if arr.size < 1000:
        raise ArgumentError(
            f"need at least 1000 samples for a stable report, got {arr.size}"
        )
    lap = fit_laplace(arr)
    gau = fit_gauss(arr)
    counts, edges = np.histogram(arr, bins=bins)
    emp = counts.astype(np.float64) / arr.size

    out: dict[str, float] = {}
    for key, cdf in (
        ("js_laplace", _laplace_cdf(edges, lap)),
        ("js_gauss", _gauss_cdf(edges, gau)),
    ):
        mass = np.diff(cdf)
        total = float(mass.sum())
        if total <= 0.0:
            raise EstimationError("fitted density has no mass on the data range")
        out[key] = js_divergence(emp, mass / total)
    return out


def optimal_gate(p1: LaplaceParams, p2: LaplaceParams) -> float:
    """Blend weight minimizing the expected squared error of the mix.

    For estimate W*x1 + (1-W)*x2 with independent Laplace errors
    (mu_i, b_i), expanding E[(W e1 + (1-W) e2)^2] with Var = 2 b^2 and
    minimizing the resulting quadratic in W gives

        W* = (2 b2^2 - mu2 (mu1 - mu2)) / (2 b1^2 + 2 b2^2 + (mu1 - mu2)^2)

    clipped to [0, 1]. Weight 1 selects expert 1.
    """
    for p in (p1, p2):
        if p.b <= 0.0:
            raise ArgumentError(f"laplace scale must be positive, got {p.b}")
    dmu = p1.mu - p2.mu
    num = 2.0 * p2.b**2 - p2.mu * dmu
    den = 2.0 * p1.b**2 + 2.0 * p2.b**2 + dmu * dmu
    return float(np.clip(num / den, 0.0, 1.0))


def mix_expected_sq_error(w: float, p1: LaplaceParams, p2: LaplaceParams) -> float:
    """E[(W e1 + (1-W) e2)^2] for independent Laplace errors; test oracle hook."""
    v1 = 2.0 * p1.b**2
    v2 = 2.0 * p2.b**2
    mean = w * p1.mu + (1.0 - w) * p2.mu
    return w * w * v1 + (1.0 - w) * (1.0 - w) * v2 + mean * mean


@dataclass(frozen=True)
class BinnedErrorStats:
    """Per-bin Laplace/Gauss fits of errors conditioned on local darkness.

    Bins with fewer than the minimum sample count, or whose samples are
    degenerate, carry None in both parameter tuples.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    laplace: tuple[LaplaceParams | None, ...]
    gauss: tuple[GaussParams | None, ...]

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def binned_error_stats(
    errors: np.ndarray,
    conditioner: np.ndarray,
    bins: int = 20,
    min_count: int = 100,
) -> BinnedErrorStats:
    """Fit error laws inside uniform bins of a [0,1] conditioning field.

    `errors` and `conditioner` must broadcast pixelwise: the conditioner
    is per-pixel while errors may carry a trailing channel axis, in which
    case every channel sample lands in its pixel's bin.
    """
    if bins < 2:
        raise ArgumentError(f"need at least 2 bins, got {bins}")
    if min_count < 2:
        raise ArgumentError(f"min_count must be >= 2, got {min_count}")
    err = np.asarray(errors, dtype=np.float64)
    cond = np.asarray(conditioner, dtype=np.float64)
    if err.shape[: cond.ndim] != cond.shape:
        raise ShapeError(
            f"conditioner shape {cond.shape} does not prefix error shape {err.shape}"
        )
    if cond.size and (cond.min() < 0.0 or cond.max() > 1.0):
        raise ArgumentError("conditioner values must lie in [0,1]")
    if err.ndim > cond.ndim:
        reps = int(np.prod(err.shape[cond.ndim :]))
        cond = np.repeat(cond.ravel(), reps)
    edges = np.linspace(0.0, 1.0, bins + 1)
    # Values exactly at 1.0 belong to the last bin.
    idx = np.minimum((cond.ravel() * bins).astype(np.int64), bins - 1)
    flat = err.ravel()

    counts = np.bincount(idx, minlength=bins)
    lap: list[LaplaceParams | None] = []
    gau: list[GaussParams | None] = []
    for i in range(bins):
        sample = flat[idx == i]
        if sample.size < min_count:
            lap.append(None)
            gau.append(None)
            continue
        try:
            lap.append(fit_laplace(sample))
            gau.append(fit_gauss(sample))
        except EstimationError:
            lap.append(None)
            gau.append(None)
    return BinnedErrorStats(
        bin_edges=edges,
        counts=counts,
        laplace=tuple(lap),
        gauss=tuple(gau),
    )


@dataclass(frozen=True)
class GateProfile:
    """Ideal blend weight per darkness bin, with sample-count confidence."""

    midpoints: np.ndarray
    gates: np.ndarray
    counts: np.ndarray


def gate_profile(stats1: BinnedErrorStats, stats2: BinnedErrorStats) -> GateProfile:
    """Per-bin optimal gate between two experts' binned error laws.

    Only bins where both sides carry a Laplace fit contribute; the
    reported count is the smaller of the two bins' sample counts.
    """
    if stats1.bin_edges.shape != stats2.bin_edges.shape or not np.array_equal(
        stats1.bin_edges, stats2.bin_edges
    ):
        raise ArgumentError("binned stats use different bin edges")
    mids, gates, counts = [], [], []
    for i, mid in enumerate(stats1.midpoints):
        p1 = stats1.laplace[i]
        p2 = stats2.laplace[i]
        if p1 is None or p2 is None:
            continue
        mids.append(float(mid))
        gates.append(optimal_gate(p1, p2))
        counts.append(int(min(stats1.counts[i], stats2.counts[i])))
    return GateProfile(
        midpoints=np.asarray(mids, dtype=np.float64),
        gates=np.asarray(gates, dtype=np.float64),
        counts=np.asarray(counts, dtype=np.int64),
    )


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation; rejects length mismatch and zero variance."""
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ArgumentError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ArgumentError(f"need at least 2 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(np.dot(xc, xc))
    vy = float(np.dot(yc, yc))
    if vx == 0.0 or vy == 0.0:
        raise EstimationError("correlation undefined: an input has zero variance")
    return float(np.dot(xc, yc) / np.sqrt(vx * vy))


def approx_gate(d: ScalarField) -> ScalarField:
    """Cheap per-pixel stand-in for the ideal gate: 1 - dark channel."""
    return ScalarField._trusted(1.0 - d.data)
