"""Drop-in physics layer: subtract haze proportionally to local darkness.

The layer reconstructs a smoke-free estimate as

    output = input - d_hat * (1 - rho)

where d_hat is the smoothed airlight-free dark channel of the *input*
frame and rho is a per-pixel, per-channel retention map supplied by the
caller (a constant, a file, or a learned predictor). Because d_hat is
computed from the degraded frame itself, the layer has no weights of its
own; everything trainable lives upstream in whatever produces rho.

Gradients of the standard per-pixel losses with respect to rho are
closed-form, so the layer composes with any gradient-based trainer
without autodiff. When `apply_sigmoid` is set the raw map is squashed
through a numerically stable logistic first and the returned gradients
are chained through its derivative rho * (1 - rho).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .darkprior import _check_window, denorm_dark_channel
from .errors import ArgumentError, DomainError, ShapeError
from .imgcore import ImageBuffer, ScalarField


@dataclass(frozen=True)
class SurgiAtmConfig:
    """Smoothing strength, dark-channel window, and rho squashing switch."""

    eta: float = 0.1
    z: int = 15
    apply_sigmoid: bool = True

    def __post_init__(self) -> None:
        if not np.isfinite(self.eta) or self.eta < 0.0:
            raise ArgumentError(f"eta must be finite and >= 0, got {self.eta}")
        _check_window(self.z)


@dataclass(frozen=True)
class AtmForwardState:
    """Everything the backward passes need, cached at forward time.

    `output` is display-clamped to [0,1]; `output_raw` is the unclamped
    reconstruction the losses and gradients are defined on. The clamped
    copy is materialized on first access — training loops that only ever
    touch `output_raw` never pay for it.
    """

    input: ImageBuffer
    rho: np.ndarray
    d_hat: ScalarField
    output_raw: np.ndarray
    apply_sigmoid: bool

    @property
    def output(self) -> ImageBuffer:
        cached = self.__dict__.get("_output")
        if cached is None:
            cached = ImageBuffer._trusted(np.clip(self.output_raw, 0.0, 1.0))
            object.__setattr__(self, "_output", cached)
        return cached


def smooth_dark_channel(d: ScalarField, eta: float) -> ScalarField:
    """Shrink the dark channel toward 1: d_hat = (d + eta) / (1 + eta).

    eta = 0 is the identity; eta > 0 lower-bounds the result at
    eta / (1 + eta), which keeps gradients alive in smoke-free regions.
    """
    if not np.isfinite(eta) or eta < 0.0:
        raise ArgumentError(f"eta must be finite and >= 0, got {eta}")
    out = d.data + eta
    out /= 1.0 + eta
    return ScalarField._trusted(out)


def _as_rho_raw(rho_raw: np.ndarray | ImageBuffer, shape: tuple) -> np.ndarray:
    arr = rho_raw.data if isinstance(rho_raw, ImageBuffer) else np.asarray(
        rho_raw, dtype=np.float64
    )
    if arr.shape != shape:
        raise ShapeError(f"rho map shape {arr.shape} != input shape {shape}")
    # One reduction instead of a full isfinite scan: any nan/inf poisons
    # the sum. A finite sum proves finiteness; a non-finite sum can also
    # be honest overflow, so only then pay for the exact elementwise check.
    if not np.isfinite(arr.sum()) and not np.all(np.isfinite(arr)):
        raise DomainError("rho map contains non-finite values")
    return arr


def forward(
    img: ImageBuffer, rho_raw: np.ndarray | ImageBuffer, cfg: SurgiAtmConfig
) -> AtmForwardState:
    """Reconstruct output = input - d_hat * (1 - rho) and cache the pieces."""
    raw = _as_rho_raw(rho_raw, img.data.shape)
    if cfg.apply_sigmoid:
        rho = expit(raw)
    else:
        if raw.min() < 0.0 or raw.max() > 1.0:
            raise DomainError("rho must lie in [0,1] when apply_sigmoid is off")
        rho = raw.copy()
    rho.flags.writeable = False
    d_hat = smooth_dark_channel(denorm_dark_channel(img, cfg.z), cfg.eta)
    # In-place pipeline (hot path): (1 - rho) * d_hat, then I - that.
    out_raw = 1.0 - rho
    out_raw *= d_hat.data[:, :, None]
    np.subtract(img.data, out_raw, out=out_raw)
    out_raw.flags.writeable = False
    return AtmForwardState(
        input=img,
        rho=rho,
        d_hat=d_hat,
        output_raw=out_raw,
        apply_sigmoid=cfg.apply_sigmoid,
    )


def _residual(state: AtmForwardState, target: ImageBuffer) -> np.ndarray:
    if target.data.shape != state.output_raw.shape:
        raise ShapeError(
            f"target shape {target.data.shape} != output shape "
            f"{state.output_raw.shape}"
        )
    return target.data - state.output_raw


def _chain_inplace(state: AtmForwardState, grad: np.ndarray) -> np.ndarray:
    if state.apply_sigmoid:
        grad *= state.rho
        grad *= 1.0 - state.rho
    return grad


def l2_loss(state: AtmForwardState, target: ImageBuffer) -> np.ndarray:
    """Per-pixel squared error 0.5 * (target - output)^2 on the raw output."""
    r = _residual(state, target)
    return 0.5 * r * r


def l1_loss(state: AtmForwardState, target: ImageBuffer) -> np.ndarray:
    """Per-pixel absolute error |target - output| on the raw output."""
    return np.abs(_residual(state, target))


def backward_l2(state: AtmForwardState, target: ImageBuffer) -> np.ndarray:
    """Gradient of the summed L2 loss w.r.t. the rho map passed to forward.

    d/d rho of 0.5*(J - (I - d_hat*(1-rho)))^2 is -d_hat * (J - output),
    evaluated as d_hat * (output - J); with the sigmoid enabled it is
    chained through rho * (1 - rho).
    """
    if target.data.shape != state.output_raw.shape:
        raise ShapeError(
            f"target shape {target.data.shape} != output shape "
            f"{state.output_raw.shape}"
        )
    grad = state.output_raw - target.data
    grad *= state.d_hat.data[:, :, None]
    return _chain_inplace(state, grad)


def backward_l1(state: AtmForwardState, target: ImageBuffer) -> np.ndarray:
    """Gradient of the summed L1 loss w.r.t. the rho map passed to forward.

    Subgradient convention sign(0) = 0 at the kink.
    """
    if target.data.shape != state.output_raw.shape:
        raise ShapeError(
            f"target shape {target.data.shape} != output shape "
            f"{state.output_raw.shape}"
        )
    grad = state.output_raw - target.data
    np.sign(grad, out=grad)
    grad *= state.d_hat.data[:, :, None]
    return _chain_inplace(state, grad)
