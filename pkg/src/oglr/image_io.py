"""Grayscale image I/O, seeded noise synthesis and quality metrics.

Images are plain 2-D ``float64`` arrays of shape ``(height, width)`` with a
nominal intensity range of [0, 255].  Values stay real-valued through every
processing step; quantization to 8 bits happens only in :func:`save_image`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

#: Returned by :func:`psnr` when the two images are identical.
PSNR_INF = float("inf")

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """The file is not a supported grayscale image."""


class MalformedHeaderError(ImageFormatError):
    pass


class UnsupportedDepthError(ImageFormatError):
    pass


class UnsupportedColorModeError(ImageFormatError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise of std-dev ``sigma`` drawn from ``seed``."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def as_image(data) -> np.ndarray:
    """Validate and convert ``data`` to a float64 image array."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains NaN or Inf")
    return img


def _read_pgm(raw: bytes) -> np.ndarray:
    # Header: magic, width, height, maxval separated by whitespace, comments allowed.
    fields = []
    pos = 2
    n = len(raw)
    while len(fields) < 3:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise MalformedHeaderError("malformed header")
        fields.append(int(token))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise MalformedHeaderError("malformed header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1 or maxval < 1:
        raise MalformedHeaderError("malformed header")
    if maxval > 255:
        raise UnsupportedDepthError("unsupported depth")
    body = raw[pos : pos + width * height]
    if len(body) < width * height:
        raise MalformedHeaderError("truncated pixel data")
    data = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return data.astype(np.float64) * (255.0 / maxval)


def _read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        bits = im.info.get("bits")
        if im.mode in ("I", "I;16", "I;16B", "I;16L", "F") or (bits and bits > 8):
            raise UnsupportedDepthError("unsupported depth")
        if im.mode == "P":
            palette_mode = im.palette.mode if im.palette else "RGB"
            if palette_mode != "L":
                raise UnsupportedColorModeError(f"unsupported color mode {im.mode}")
            im = im.convert("L")
        if im.mode == "1":
            im = im.convert("L")
        if im.mode != "L":
            raise UnsupportedColorModeError(f"unsupported color mode {im.mode}")
        return np.asarray(im, dtype=np.float64)


def load_image(path) -> np.ndarray:
    """Load a binary PGM (P5, maxval <= 255) or 8-bit grayscale PNG."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:2] == b"P5":
        with open(path, "rb") as fh:
            return _read_pgm(fh.read())
    if head == _PNG_MAGIC:
        return _read_png(path)
    if len(head) < 2:
        raise MalformedHeaderError("malformed header")
    raise ImageFormatError(f"{os.fspath(path)}: not a P5 PGM or PNG file")


def quantize(img) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero to ``uint8``."""
    img = np.asarray(img, dtype=np.float64)
    clipped = np.clip(img, 0.0, 255.0)
    # Values are non-negative after the clamp, so floor(x + 0.5) rounds half up.
    return np.floor(clipped + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Write ``img`` as 8-bit data; the format follows the file suffix."""
    data = quantize(as_image(img))
    path = os.fspath(path)
    if path.lower().endswith((".pgm", ".pnm")):
        h, w = data.shape
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(data.tobytes())
    else:
        Image.fromarray(data, mode="L").save(path, format="PNG")


def standard_normal(shape, seed: int) -> np.ndarray:
    """Box-Muller normals from a PCG64 stream seeded with ``seed``.

    Uniforms come from ``numpy.random.PCG64`` (64-bit state, published
    constants).  Each pair ``(u1, u2)`` in (0, 1] x [0, 1) yields two
    deviates ``r cos(2 pi u2)`` and ``r sin(2 pi u2)`` with
    ``r = sqrt(-2 ln u1)``.
    """
    count = int(np.prod(shape, dtype=np.int64))
    pairs = (count + 1) // 2
    rng = np.random.Generator(np.random.PCG64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    u = rng.random((pairs, 2))
    u1 = 1.0 - u[:, 0]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u[:, 1]
    out = np.empty((pairs, 2))
    out[:, 0] = radius * np.cos(angle)
    out[:, 1] = radius * np.sin(angle)
    return out.ravel()[:count].reshape(shape)


def add_awgn(img, spec: NoiseSpec) -> np.ndarray:
    """Return ``img + sigma * n`` with reproducible normals; no clamping."""
    img = as_image(img)
    if spec.sigma == 0:
        return img.copy()
    return img + spec.sigma * standard_normal(img.shape, spec.seed)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def mse(ref, test) -> float:
    ref = as_image(ref)
    test = as_image(test)
    _check_same_shape(ref, test)
    return float(np.mean((ref - test) ** 2))


def psnr(ref, test) -> float:
    """Peak signal-to-noise ratio in dB for peak 255; ``PSNR_INF`` if equal."""
    err = mse(ref, test)
    if err == 0.0:
        return PSNR_INF
    return float(10.0 * np.log10(255.0**2 / err))


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(ref, test, data_range=255.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Local statistics are evaluated only where the window fits entirely
    inside the image, as in the reference formulation.
    """
    ref = as_image(ref)
    test = as_image(test)
    _check_same_shape(ref, test)
    if min(ref.shape) < 11:
        raise ValueError("image too small for an 11x11 SSIM window")
    win = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(x):
        return ndimage.correlate(x, win, mode="constant")[5:-5, 5:-5]

    mu1 = filt(ref)
    mu2 = filt(test)
    s11 = filt(ref * ref) - mu1 * mu1
    s22 = filt(test * test) - mu2 * mu2
    s12 = filt(ref * test) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))
