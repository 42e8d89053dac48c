"""A deliberately small trainable predictor to exercise the physics layer.

The model is one affine map per output channel over eight per-pixel
features (the three input channels, the local darkness, three 3x3
channel means, and a bias), trained by full-batch gradient descent.
It exists to compare two decodings of the same capacity:

  * direct    — the affine output *is* the restored pixel;
  * surgiatm  — the affine output is a raw retention map fed through the
                physics layer, which turns it into a restored pixel.

Everything is seeded and full-batch, so a fixed configuration yields a
bitwise-identical loss trace on every run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from . import atmlayer
from .atmlayer import SurgiAtmConfig
from .darkprior import denorm_dark_channel
from .errors import ArgumentError, ShapeError, TrainingError
from .imgcore import ImageBuffer
from .metrics import MetricReport, metric_report

N_FEATURES = 8
_MODES = ("direct", "surgiatm")
_LOSSES = ("l1", "l2")


@dataclass(frozen=True)
class ToyPredictor:
    """Per-output-channel affine coefficients over the 8 pixel features."""

    weights: np.ndarray  # (3, N_FEATURES)
    mode: str = "surgiatm"

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (3, N_FEATURES):
            raise ShapeError(f"weights must be (3, {N_FEATURES}), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ArgumentError("weights contain non-finite values")
        if self.mode not in _MODES:
            raise ArgumentError(f"mode must be one of {_MODES}, got {self.mode!r}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    loss: str = "l2"
    mode: str = "surgiatm"
    seed: int = 0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0.0):
            raise ArgumentError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss not in _LOSSES:
            raise ArgumentError(f"loss must be one of {_LOSSES}, got {self.loss!r}")
        if self.mode not in _MODES:
            raise ArgumentError(f"mode must be one of {_MODES}, got {self.mode!r}")


def feature_map(img: ImageBuffer, z: int) -> np.ndarray:
    """(H, W, 8) features: RGB, local darkness, 3x3 channel means, bias."""
    if img.channels != 3:
        raise ShapeError(f"feature_map needs 3 channels, got {img.channels}")
    dd = denorm_dark_channel(img, z).data
    local = uniform_filter(img.data, size=(3, 3, 1), mode="nearest")
    ones = np.ones_like(dd)
    return np.concatenate(
        [img.data, dd[:, :, None], local, ones[:, :, None]], axis=2
    )


def _normalize_pairs(
    pairs: Iterable,
) -> list[tuple[ImageBuffer, ImageBuffer]]:
    out = []
    for p in pairs:
        if hasattr(p, "smoky") and hasattr(p, "clean"):
            smoky, clean = p.smoky, p.clean
        else:
            smoky, clean = p
        if smoky.data.shape != clean.data.shape:
            raise ShapeError(
                f"pair shapes differ: {smoky.data.shape} vs {clean.data.shape}"
            )
        out.append((smoky, clean))
    if not out:
        raise ArgumentError("need at least one training pair")
    return out


def _prepare(
    pairs: Sequence[tuple[ImageBuffer, ImageBuffer]], atm: SurgiAtmConfig
) -> list[tuple[ImageBuffer, ImageBuffer, np.ndarray]]:
    return [(smoky, clean, feature_map(smoky, atm.z)) for smoky, clean in pairs]


def loss_and_gradient(
    pairs: Iterable,
    weights: np.ndarray,
    cfg: TrainConfig,
    atm: SurgiAtmConfig,
) -> tuple[float, np.ndarray]:
    """Mean per-element loss over the batch and its gradient w.r.t. weights.

    The surgiatm mode routes the affine output through the physics layer
    and pulls gradients back with the layer's closed-form backward pass;
    the direct mode treats the affine output as the restored frame.
    """
    prepared = _prepare(_normalize_pairs(pairs), atm)
    return _batch_loss_and_gradient(prepared, np.asarray(weights, float), cfg, atm)


def _batch_loss_and_gradient(
    prepared: Sequence[tuple[ImageBuffer, ImageBuffer, np.ndarray]],
    weights: np.ndarray,
    cfg: TrainConfig,
    atm: SurgiAtmConfig,
) -> tuple[float, np.ndarray]:
    total_loss = 0.0
    total_n = 0
    grad = np.zeros_like(weights)
    for smoky, clean, feat in prepared:
        raw = np.einsum("hwf,cf->hwc", feat, weights)
        if cfg.mode == "surgiatm":
            state = atmlayer.forward(smoky, raw, atm)
            if cfg.loss == "l2":
                loss_px = atmlayer.l2_loss(state, clean)
                grad_raw = atmlayer.backward_l2(state, clean)
            else:
                loss_px = atmlayer.l1_loss(state, clean)
                grad_raw = atmlayer.backward_l1(state, clean)
        else:
            resid = clean.data - raw
            if cfg.loss == "l2":
                loss_px = 0.5 * resid * resid
                grad_raw = -resid
            else:
                loss_px = np.abs(resid)
                grad_raw = -np.sign(resid)
        total_loss += float(loss_px.sum())
        total_n += loss_px.size
        grad += np.einsum("hwc,hwf->cf", grad_raw, feat)
    return total_loss / total_n, grad / total_n


def train(
    pairs: Iterable, cfg: TrainConfig, atm: SurgiAtmConfig
) -> tuple[ToyPredictor, list[float]]:
    """Full-batch gradient descent; returns the model and per-epoch losses.

    The trace holds the batch loss evaluated at the weights *before* each
    update, so trace[0] reflects the seeded initialization. A non-finite
    loss or gradient aborts with an error naming the epoch.
    """
    prepared = _prepare(_normalize_pairs(pairs), atm)
    rng = np.random.default_rng(cfg.seed)
    weights = rng.normal(0.0, 0.01, size=(3, N_FEATURES))
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        loss, grad = _batch_loss_and_gradient(prepared, weights, cfg, atm)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingError(f"training diverged at epoch {epoch}")
        trace.append(loss)
        weights = weights - cfg.learning_rate * grad
    if not np.all(np.isfinite(weights)):
        raise TrainingError(f"training diverged at epoch {cfg.epochs - 1}")
    return ToyPredictor(weights=weights, mode=cfg.mode), trace


def predict(model: ToyPredictor, img: ImageBuffer, atm: SurgiAtmConfig) -> ImageBuffer:
    """Restore one frame with a trained predictor."""
    feat = feature_map(img, atm.z)
    raw = np.einsum("hwf,cf->hwc", feat, model.weights)
    if model.mode == "surgiatm":
        return atmlayer.forward(img, raw, atm).output
    return ImageBuffer._trusted(np.clip(raw, 0.0, 1.0))


def evaluate(model: ToyPredictor, pairs: Iterable, atm: SurgiAtmConfig) -> MetricReport:
    """Mean metrics of the model's restorations over (smoky, clean) pairs."""
    norm = _normalize_pairs(pairs)
    reports = [metric_report(predict(model, smoky, atm), clean) for smoky, clean in norm]
    return MetricReport(
        ciede2000=float(np.mean([r.ciede2000 for r in reports])),
        psnr=float(np.mean([r.psnr for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        ssim=float(np.mean([r.ssim for r in reports])),
    )
