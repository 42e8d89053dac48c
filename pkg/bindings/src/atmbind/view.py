"""Flat float32 tensor views exchanged across the binding boundary.

Everything that crosses into or out of this package travels as a
:class:`FlatTensorView`: a one-dimensional, contiguous, 32-bit float
buffer plus the logical raster shape it flattens. Keeping the wire
format this dumb means any host that can hand over a typed buffer
(numpy arrays, ``array.array('f')``, a framework tensor exported
through the buffer protocol) can participate without a serialization
layer.

Views alias the caller's memory — constructing one never copies.
Library calls treat view memory as strictly read-only and every result
is returned in a freshly allocated buffer the caller then owns. The
flip side of aliasing: a view is only valid for as long as its backing
buffer lives, so do not stash views past the lifetime of whatever
produced the memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from surgiatm import ArgumentError, ShapeError

__all__ = ["FlatTensorView"]


def _as_flat_f32(data: object) -> np.ndarray:
    """Coerce a buffer-protocol object to a flat float32 array, zero-copy.

    The element type is taken from the buffer's own format descriptor,
    never reinterpreted: a float64 buffer arrives as float64 and is
    rejected by the caller's dtype check rather than silently re-read
    as pairs of narrower floats.
    """
    if isinstance(data, np.ndarray):
        return data
    try:
        return np.asarray(memoryview(data))
    except TypeError as exc:
        raise ArgumentError(
            f"data must expose the buffer protocol, got {type(data).__name__}"
        ) from exc


@dataclass(frozen=True)
class FlatTensorView:
    """A contiguous float32 buffer with its logical ``(H, W)`` or ``(H, W, C)`` shape.

    Invariant: ``data.size == H * W [* C]``. Violations raise at
    construction so no downstream call ever sees a torn view.
    """

    data: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        arr = _as_flat_f32(self.data)
        if arr.dtype != np.float32:
            raise ArgumentError(
                f"boundary buffers must be float32, got {arr.dtype}"
            )
        if arr.ndim != 1:
            raise ArgumentError(
                f"data must be a flat (1-D) buffer, got {arr.ndim} axes"
            )
        if not arr.flags["C_CONTIGUOUS"]:
            raise ArgumentError("data must be contiguous (no strided views)")
        shape = tuple(int(n) for n in self.shape)
        if len(shape) not in (2, 3):
            raise ShapeError(
                f"shape must be (H, W) or (H, W, C), got {len(shape)} axes"
            )
        if any(n < 1 for n in shape):
            raise ShapeError(f"shape axes must be positive, got {shape}")
        if arr.size != math.prod(shape):
            raise ShapeError(
                f"buffer holds {arr.size} elements but shape {shape} "
                f"requires {math.prod(shape)}"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_array(cls, arr: object) -> "FlatTensorView":
        """Build a view from a 2-D or 3-D array, casting to float32.

        Unlike the constructor this is a convenience path and may copy:
        non-float32 input is cast and non-contiguous input is compacted.
        Already-flat-and-float32 arrays pass through without copying.
        """
        a = np.asarray(arr)
        if a.ndim not in (2, 3):
            raise ShapeError(
                f"expected an (H, W) or (H, W, C) array, got {a.ndim} axes"
            )
        flat = np.ascontiguousarray(a, dtype=np.float32).reshape(-1)
        return cls(flat, a.shape)

    @property
    def array(self) -> np.ndarray:
        """The buffer reshaped to ``shape`` — a view, not a copy."""
        return self.data.reshape(self.shape)

    @property
    def size(self) -> int:
        return self.data.size
