"""Forward/backward entry points behind opaque state handles.

The host calls :func:`atm_forward`, keeps the integer handle it gets
back, feeds that handle to :func:`atm_backward` during its backward
pass, and finally calls :func:`release`. The handle is the host-side
stand-in for the cached forward state (input, squashed rho, smoothed
darkness); a custom-function context in the host framework owns its
lifetime.

Numeric policy: the boundary speaks float32, the interior computes in
float64. Every inbound view is widened into a fresh float64 copy and
every result is narrowed into a fresh float32 buffer, so caller memory
is never written — only read — and results never alias internal state.

Lifetime policy: tokens are issued once and never reused. Releasing a
token twice, or touching it after release, raises
:class:`LifecycleError` instead of silently resolving to some newer
state. The table keeps the set of retired tokens for exactly this
reason; tokens are small integers, so the bookkeeping stays cheap even
over very long sessions.

Concurrency: calls are reentrant and the table is lock-guarded, so
distinct handles can be driven from distinct threads. A single handle
is not a synchronization point — do not share one between concurrently
running calls.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

import numpy as np

import surgiatm
from surgiatm import (
    ArgumentError,
    AtmForwardState,
    ImageBuffer,
    ShapeError,
    SurgiAtmConfig,
    backward_l1,
    backward_l2,
)

from .view import FlatTensorView

__all__ = [
    "LifecycleError",
    "atm_forward",
    "atm_backward",
    "denorm_dark_channel",
    "release",
    "live_handles",
]


class LifecycleError(RuntimeError):
    """A state handle was used after release, released twice, or never issued."""


@dataclass(frozen=True)
class _Entry:
    state: AtmForwardState
    boundary_shape: tuple[int, ...]  # the shape the caller's views carried


class _HandleTable:
    """Token-to-state map with stale-token detection."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._tokens = itertools.count(1)
        self._live: dict[int, _Entry] = {}
        self._retired: set[int] = set()

    @staticmethod
    def _check_token(token: object) -> int:
        # bool is an int subclass; True would otherwise resolve to token 1.
        if isinstance(token, bool) or not isinstance(token, int):
            raise LifecycleError(
                f"state handle must be an integer token, got {type(token).__name__}"
            )
        return token

    def put(self, entry: _Entry) -> int:
        with self._lock:
            token = next(self._tokens)
            self._live[token] = entry
            return token

    def get(self, token: object) -> _Entry:
        token = self._check_token(token)
        with self._lock:
            entry = self._live.get(token)
            if entry is not None:
                return entry
            if token in self._retired:
                raise LifecycleError(f"state handle {token} used after release")
            raise LifecycleError(f"state handle {token} was never issued")

    def drop(self, token: object) -> None:
        token = self._check_token(token)
        with self._lock:
            if self._live.pop(token, None) is not None:
                self._retired.add(token)
                return
            if token in self._retired:
                raise LifecycleError(f"state handle {token} released twice")
            raise LifecycleError(f"state handle {token} was never issued")

    def count(self) -> int:
        with self._lock:
            return len(self._live)


_TABLE = _HandleTable()


def _require_view(value: object, name: str) -> FlatTensorView:
    if not isinstance(value, FlatTensorView):
        raise ArgumentError(
            f"{name} must be a FlatTensorView, got {type(value).__name__} "
            "(wrap raw arrays with FlatTensorView.from_array)"
        )
    return value


def _widen(view: FlatTensorView) -> np.ndarray:
    # astype always copies across dtypes, which is what keeps caller
    # buffers untouched no matter what the interior does.
    return view.array.astype(np.float64)


def _narrow(arr: np.ndarray, shape: tuple[int, ...]) -> FlatTensorView:
    return FlatTensorView(arr.astype(np.float32).reshape(-1), shape)


def atm_forward(
    input: FlatTensorView,
    rho_raw: FlatTensorView,
    eta: float = 0.1,
    z: int = 15,
    apply_sigmoid: bool = True,
) -> tuple[FlatTensorView, int]:
    """Run the restoration layer; return its output and a state handle.

    ``input`` holds (H, W, 3) intensities in [0,1]; ``rho_raw`` is the
    retention map, squashed through a sigmoid when ``apply_sigmoid`` is
    on and required to already lie in [0,1] when it is off. Both views
    must carry the same shape — the darkness prior is three-channel, so
    single-plane inputs are rejected by the layer underneath. The
    returned output is the raw (unclamped)
    reconstruction ``input - d_hat * (1 - rho)`` — clamp before display,
    feed as-is to a loss. The handle stays valid until :func:`release`.
    """
    img_view = _require_view(input, "input")
    rho_view = _require_view(rho_raw, "rho_raw")
    if img_view.shape != rho_view.shape:
        raise ShapeError(
            f"input shape {img_view.shape} != rho_raw shape {rho_view.shape}"
        )
    img = ImageBuffer.from_array(_widen(img_view), copy=False)
    raw = _widen(rho_view)
    if raw.ndim == 2:
        # ImageBuffer promotes (H, W) to (H, W, 1); track it on the rho
        # side so a plane input fails on the real constraint (the
        # three-channel prior), not on a phantom shape mismatch.
        raw = raw[:, :, None]
    cfg = SurgiAtmConfig(eta=eta, z=z, apply_sigmoid=apply_sigmoid)
    state = surgiatm.forward(img, raw, cfg)
    token = _TABLE.put(_Entry(state=state, boundary_shape=img_view.shape))
    return _narrow(state.output_raw, img_view.shape), token


def atm_backward(
    handle: int, target: FlatTensorView, loss: str = "l2"
) -> FlatTensorView:
    """Gradient of the summed loss w.r.t. the rho map given to forward.

    ``loss`` selects "l1" or "l2" (case-insensitive). The handle stays
    live afterwards, so a host can evaluate several targets against one
    cached forward before releasing it.
    """
    entry = _TABLE.get(handle)
    tgt_view = _require_view(target, "target")
    if tgt_view.shape != entry.boundary_shape:
        raise ShapeError(
            f"target shape {tgt_view.shape} != forward shape {entry.boundary_shape}"
        )
    kind = loss.lower() if isinstance(loss, str) else loss
    if kind == "l2":
        grad = backward_l2(entry.state, ImageBuffer.from_array(_widen(tgt_view), copy=False))
    elif kind == "l1":
        grad = backward_l1(entry.state, ImageBuffer.from_array(_widen(tgt_view), copy=False))
    else:
        raise ArgumentError(f"loss must be 'l1' or 'l2', got {loss!r}")
    return _narrow(grad, entry.boundary_shape)


def denorm_dark_channel(input: FlatTensorView, z: int = 15) -> FlatTensorView:
    """Windowed per-pixel channel minimum of ``input`` as an (H, W) view."""
    img_view = _require_view(input, "input")
    img = ImageBuffer.from_array(_widen(img_view), copy=False)
    field = surgiatm.denorm_dark_channel(img, z)
    return _narrow(field.data, img_view.shape[:2])


def release(handle: int) -> None:
    """Retire a state handle; the token never becomes valid again."""
    _TABLE.drop(handle)


def live_handles() -> int:
    """Number of forward states currently held (useful for leak checks)."""
    return _TABLE.count()
