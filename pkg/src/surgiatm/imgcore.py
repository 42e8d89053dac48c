"""Image containers, color conversion, and lossless frame I/O.

Rasters are carried as numpy arrays wrapped in thin immutable containers:
``ImageBuffer`` for 1- or 3-channel intensity images normalized to [0,1],
``ScalarField`` for single-plane scalar maps (dark channels, transmissions,
gates, densities). All pipeline math operates on display-referred
intensities; nothing is linearized before restoration.

On-disk formats: 8-bit PNG (canonical, via Pillow) and binary PPM/PGM
(dependency-free fallback, handled natively). Quantization to 8 bits uses
round-half-to-even so outputs are deterministic across platforms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DomainError, FormatError, ShapeError

_MAX8 = 255.0


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x C raster of normalized intensities in [0,1], C in {1, 3}.

    The backing array is frozen (non-writeable); operations return new
    buffers, so instances are safe to share across threads.
    """

    data: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray, copy: bool = True) -> "ImageBuffer":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ShapeError(f"expected (H, W, 1|3) raster, got shape {arr.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ShapeError(f"degenerate raster dimensions {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite intensity values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise DomainError("intensities outside [0,1]")
        if copy:
            a = a.copy()
        return cls(_readonly(a))

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> "ImageBuffer":
        # Internal fast path: caller guarantees the [0,1] invariant
        # (values produced by an explicit clamp or convex combination).
        return cls(_readonly(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ScalarField:
    """H x W plane of scalars; dark-channel-valued fields stay in [0,1]."""

    data: np.ndarray

    @classmethod
    def from_array(
        cls, arr: np.ndarray, copy: bool = True, unit_range: bool = False
    ) -> "ScalarField":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ShapeError(f"expected (H, W) field, got shape {arr.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite field values")
        if unit_range and (a.min() < 0.0 or a.max() > 1.0):
            raise DomainError("field values outside [0,1]")
        if copy:
            a = a.copy()
        return cls(_readonly(a))

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> "ScalarField":
        return cls(_readonly(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class LabPixel:
    """CIE 1976 L*a*b* triple under the D65 reference white."""

    L: float
    a: float
    b: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.L <= 100.0:
            raise DomainError(f"L* out of [0,100]: {self.L}")


# ---------------------------------------------------------------------------
# Frame I/O
# ---------------------------------------------------------------------------

def load_image(path) -> ImageBuffer:
    """Load an 8-bit PNG/PPM/PGM frame and normalize intensities by 255.

    Grayscale stays single-channel; RGB stays 3-channel. Higher bit depths
    and palettes are rejected rather than silently converted.
    """
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read image file {p}: {exc}") from exc
    if raw[:2] in (b"P6", b"P5"):
        arr = _decode_pnm(raw, p)
    else:
        arr = _decode_with_pillow(raw, p)
    return ImageBuffer._trusted(arr.astype(np.float64) / _MAX8)


def save_image(img: ImageBuffer, path) -> None:
    """Write an ImageBuffer as 8-bit PNG or binary PPM/PGM (by extension).

    Quantization rounds half to even, so save followed by load reproduces
    the quantized image exactly.
    """
    quant = np.round(img.data * _MAX8).astype(np.uint8)
    p = Path(path)
    suffix = p.suffix.lower()
    try:
        if suffix in (".ppm", ".pgm", ".pnm"):
            _encode_pnm(quant, p)
        else:
            _encode_with_pillow(quant, p)
    except OSError as exc:
        raise OSError(f"cannot write image file {p}: {exc}") from exc


def _decode_with_pillow(raw: bytes, p: Path) -> np.ndarray:
    import io

    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(raw)) as im:
            if im.mode not in ("RGB", "L"):
                raise FormatError(
                    f"unsupported image mode {im.mode!r} in {p} (need 8-bit RGB or gray)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"undecodable image file {p}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _encode_with_pillow(quant: np.ndarray, p: Path) -> None:
    from PIL import Image

    mode = "RGB" if quant.shape[2] == 3 else "L"
    im = Image.fromarray(quant[:, :, 0] if mode == "L" else quant, mode=mode)
    im.save(p, format="PNG")


_PNM_HEADER = re.compile(
    rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", re.DOTALL
)


def _decode_pnm(raw: bytes, p: Path) -> np.ndarray:
    m = _PNM_HEADER.match(raw)
    if not m:
        raise FormatError(f"malformed PNM header in {p}")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise FormatError(f"unsupported PNM bit depth (maxval={maxval}) in {p}")
    channels = 3 if magic == b"P6" else 1
    body = raw[m.end():]
    expected = w * h * channels
    if len(body) < expected:
        raise FormatError(f"truncated PNM payload in {p}")
    arr = np.frombuffer(body[:expected], dtype=np.uint8).reshape(h, w, channels)
    return arr


def _encode_pnm(quant: np.ndarray, p: Path) -> None:
    h, w, c = quant.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    p.write_bytes(header + quant.tobytes())


# ---------------------------------------------------------------------------
# Colorimetry
# ---------------------------------------------------------------------------

# sRGB -> XYZ (D65) matrix and white point, IEC 61966-2-1.
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_LAB_EPS = (6.0 / 29.0) ** 3
_LAB_KAPPA = (29.0 / 6.0) ** 2 / 3.0


def srgb_to_lab(img: ImageBuffer) -> np.ndarray:
    """Convert a 3-channel sRGB-encoded buffer to an H x W x 3 L*a*b* raster.

    Per-pixel sRGB -> linear -> XYZ(D65) -> L*a*b* with the standard
    piecewise transfer functions.
    """
    if img.channels != 3:
        raise ShapeError(f"srgb_to_lab needs 3 channels, got {img.channels}")
    rgb = img.data
    lin = np.where(
        rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4
    )
    xyz = lin @ _SRGB_TO_XYZ.T
    r = xyz / _WHITE_D65
    f = np.where(r > _LAB_EPS, np.cbrt(r), _LAB_KAPPA * r + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resize_bilinear(img: ImageBuffer, w: int, h: int) -> ImageBuffer:
    """Bilinear resample with half-pixel centers and edge clamping.

    Resizing to the source dimensions is an exact identity; output values
    stay within the input range (clamped to [0,1]).
    """
    if w < 1 or h < 1:
        raise ArgumentError(f"target dimensions must be >= 1, got {w}x{h}")
    src = img.data
    sh, sw = src.shape[0], src.shape[1]
    if (w, h) == (sw, sh):
        return ImageBuffer._trusted(src.copy())

    xs = (np.arange(w) + 0.5) * (sw / w) - 0.5
    ys = (np.arange(h) + 0.5) * (sh / h) - 0.5
    xs = np.clip(xs, 0.0, sw - 1.0)
    ys = np.clip(ys, 0.0, sh - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]

    top = src[y0[:, None], x0[None, :], :] * (1.0 - fx) + src[y0[:, None], x1[None, :], :] * fx
    bot = src[y1[:, None], x0[None, :], :] * (1.0 - fx) + src[y1[:, None], x1[None, :], :] * fx
    out = top * (1.0 - fy) + bot * fy
    return ImageBuffer._trusted(np.clip(out, 0.0, 1.0))
