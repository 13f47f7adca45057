"""Patch extraction, DCT pre-filtering and non-local similar-patch search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dctn, idctn

#: Hard-threshold multiplier applied to the noise std-dev.
HARD_THRESHOLD = 2.7


@dataclass(frozen=True)
class PatchRef:
    x0: int
    y0: int
    side: int

    def slices(self):
        return (slice(self.y0, self.y0 + self.side), slice(self.x0, self.x0 + self.side))

    def extract(self, img) -> np.ndarray:
        """Row-major pixel vector of length ``side**2``."""
        return np.asarray(img, dtype=np.float64)[self.slices()].ravel()


@dataclass
class PatchCluster:
    """Target patch ``refs[0]`` followed by its similar patches.

    ``distances[k]`` is the squared pre-filtered distance of patch ``k`` to
    the target (0 for the target itself).  ``short`` is set when the search
    window held fewer candidates than requested.
    """

    refs: list
    pixels: np.ndarray
    distances: np.ndarray
    short: bool = False

    @property
    def k(self) -> int:
        return len(self.refs)

    @property
    def side(self) -> int:
        return self.refs[0].side


def _axis_starts(length, side, stride):
    last = length - side
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return starts


def target_grid(img, side: int, stride: int) -> list:
    """Top-left corners spaced ``stride`` apart, last row/column always included.

    Every pixel is covered when ``stride <= side``.
    """
    h, w = np.shape(img)
    if side < 1 or side > min(h, w):
        raise ValueError(f"patch side {side} exceeds image {w}x{h}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ys = _axis_starts(h, side, stride)
    xs = _axis_starts(w, side, stride)
    return [PatchRef(x, y, side) for y in ys for x in xs]


def dct2(patch, side: int) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a row-major patch vector."""
    p = np.asarray(patch, dtype=np.float64)
    if p.size != side * side:
        raise ValueError(f"patch of {p.size} values is not {side}x{side}")
    return dctn(p.reshape(side, side), type=2, norm="ortho").ravel()


def idct2(coef, side: int) -> np.ndarray:
    c = np.asarray(coef, dtype=np.float64)
    return idctn(c.reshape(side, side), type=2, norm="ortho").ravel()


def threshold_coefficients(coef, sigma, lam=HARD_THRESHOLD):
    """Zero AC coefficients with magnitude below ``lam * sigma``.

    Works on any array whose last axis is the flattened coefficient vector;
    index 0 (DC) is never touched.
    """
    coef = np.array(coef, dtype=np.float64, copy=True)
    thr = lam * sigma
    if thr > 0:
        ac = coef[..., 1:]
        ac[np.abs(ac) < thr] = 0.0
    return coef


def prefilter(patch, side: int, sigma: float, lam=HARD_THRESHOLD) -> np.ndarray:
    """Coarse pre-filter: DCT hard thresholding then inverse DCT."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return idct2(threshold_coefficients(dct2(patch, side), sigma, lam), side)


def all_patch_coefficients(img, side: int, sigma: float, lam=HARD_THRESHOLD) -> np.ndarray:
    """Thresholded DCT coefficients of every patch, shape ``(H-s+1, W-s+1, s*s)``."""
    img = np.asarray(img, dtype=np.float64)
    win = sliding_window_view(img, (side, side))
    coef = dctn(win, type=2, norm="ortho", axes=(2, 3))
    coef = coef.reshape(win.shape[0], win.shape[1], side * side)
    return threshold_coefficients(coef, sigma, lam)


def window_bounds(target: PatchRef, shape, radius: int):
    """Inclusive ranges of candidate top-left corners for ``target``."""
    h, w = shape
    s = target.side
    y_lo = max(0, target.y0 - radius)
    y_hi = min(h - s, target.y0 + radius)
    x_lo = max(0, target.x0 - radius)
    x_hi = min(w - s, target.x0 + radius)
    return y_lo, y_hi, x_lo, x_hi


#: Distances within this fraction of the largest one count as ties.
TIE_RTOL = 1e-9


def rank_candidates(dist, ys, xs, width, count):
    """Indices of the ``count`` smallest distances, ties by raster position.

    Distances that differ only by rounding (``TIE_RTOL`` of the largest)
    are treated as equal.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(dist, kind="stable")
    tol = TIE_RTOL * max(float(np.max(np.abs(dist))), 1e-300)
    group = np.empty(dist.size, dtype=np.int64)
    group[order] = np.concatenate(([0], np.cumsum(np.diff(dist[order]) > tol)))
    raster = np.asarray(ys) * width + np.asarray(xs)
    return np.lexsort((raster, group))[:count]


def find_similar(img, target: PatchRef, k: int, search_radius: int, sigma: float,
                 coefficients=None, lam=HARD_THRESHOLD) -> PatchCluster:
    """Target plus its ``k - 1`` nearest patches in the pre-filtered DCT domain.

    Candidates are all in-bounds patches whose top-left corner lies within
    Chebyshev distance ``search_radius`` of the target's.  ``coefficients``
    may carry precomputed output of :func:`all_patch_coefficients`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    s = target.side
    z0 = target.extract(img)
    if k == 1:
        return PatchCluster([target], z0[None, :], np.zeros(1))

    if coefficients is None:
        coefficients = all_patch_coefficients(img, s, sigma, lam)
    y_lo, y_hi, x_lo, x_hi = window_bounds(target, img.shape, search_radius)
    block = coefficients[y_lo : y_hi + 1, x_lo : x_hi + 1]
    q = coefficients[target.y0, target.x0]
    dist = np.sum((block - q) ** 2, axis=-1).ravel()
    ys, xs = np.meshgrid(np.arange(y_lo, y_hi + 1), np.arange(x_lo, x_hi + 1), indexing="ij")
    ys = ys.ravel()
    xs = xs.ravel()
    keep = ~((ys == target.y0) & (xs == target.x0))
    dist, ys, xs = dist[keep], ys[keep], xs[keep]

    want = k - 1
    chosen = rank_candidates(dist, ys, xs, img.shape[1], want)
    refs = [target] + [PatchRef(int(xs[c]), int(ys[c]), s) for c in chosen]
    pixels = np.stack([r.extract(img) for r in refs])
    distances = np.concatenate(([0.0], dist[chosen]))
    return PatchCluster(refs, pixels, distances, short=len(chosen) < want)
