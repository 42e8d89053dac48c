"""Float32-boundary bindings for the surgiatm restoration layer.

This package is the seam between the pure-float64 core and host
frameworks that move 32-bit tensors: flat contiguous views in, opaque
state handles across, freshly allocated float32 buffers out. See
:mod:`atmbind.view` for the wire format and :mod:`atmbind.bridge` for
the lifetime and purity rules.
"""

from .bridge import (
    LifecycleError,
    atm_backward,
    atm_forward,
    denorm_dark_channel,
    live_handles,
    release,
)
from .view import FlatTensorView

__version__ = "0.1.0"

__all__ = [
    "FlatTensorView",
    "LifecycleError",
    "atm_backward",
    "atm_forward",
    "denorm_dark_channel",
    "live_handles",
    "release",
]
