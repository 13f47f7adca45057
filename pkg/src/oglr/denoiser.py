"""Iterative whole-image denoising with optimal graph Laplacian regularization.

Each pass denoises overlapping target patches on a regular grid.  For a
target patch the pipeline is: similar-patch search on pre-filtered DCT
coefficients, gradient-noise estimation over the cluster, optimal exemplar
features, thresholded-Gaussian graph, then the discrepancy-constrained
solve.  Denoised patches are blended with weights inversely proportional
to the cluster's total pre-filtered distance, and the noise level for the
next pass is predicted from the size of the update.

:func:`denoise_patch` runs the pipeline for one target through the
module-level building blocks; :func:`denoise_pass` runs the same
computation vectorized over chunks of targets.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import idctn

from . import graph_core, gradient_stats, patching, solver
from .image_io import as_image, psnr, ssim

log = logging.getLogger(__name__)

#: ``(max_sigma, side, K, stride)`` rows; the first row whose bound covers
#: the current noise level is used.
DEFAULT_SCHEDULE = (
    (20.0, 7, 8, 2),
    (40.0, 10, 16, 3),
    (60.0, 14, 32, 4),
    (math.inf, 22, 50, 6),
)

#: Floor on the cluster distance used for aggregation weights.
WEIGHT_FLOOR = 1e-8

# Upper bound on float64 elements held by one chunk's pairwise-difference array.
_CHUNK_ELEMENTS = 1 << 23


@dataclass
class OglrParams:
    gamma: float = 0.6
    c_i: float = 0.7
    c_i_final: float = 0.98
    sigma_th: float = 10.0
    max_iters: int = 6
    nu: float = 1.0
    beta: float = 1e-12
    schedule: tuple = DEFAULT_SCHEDULE
    search_radius: int | None = None  # None -> 19 * stride
    hard_threshold: float = patching.HARD_THRESHOLD
    min_degree: int = graph_core.MIN_DEGREE
    include_self: bool = True
    workers: int = 1

    def __post_init__(self):
        self.schedule = tuple(tuple(row) for row in self.schedule)
        self.validate()

    def validate(self):
        if not 0 < self.c_i <= self.c_i_final <= 1:
            raise ValueError("need 0 < c_i <= c_i_final <= 1")
        if self.sigma_th < 0:
            raise ValueError("sigma_th must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.nu <= 0 or self.beta <= 0:
            raise ValueError("nu and beta must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        bounds = [row[0] for row in self.schedule]
        if not self.schedule or bounds != sorted(bounds) or bounds[-1] < 100:
            raise ValueError("schedule bounds must increase and cover sigma up to 100")
        for _, side, k, stride in self.schedule:
            if not (7 <= side <= 22 and 5 <= k <= 50 and 2 <= stride <= 6):
                raise ValueError(f"schedule row out of range: side={side} K={k} stride={stride}")

    def stage(self, sigma: float):
        """``(side, K, stride, search_radius)`` for noise level ``sigma``."""
        for bound, side, k, stride in self.schedule:
            if sigma <= bound:
                break
        radius = 19 * stride if self.search_radius is None else self.search_radius
        return int(side), int(k), int(stride), int(radius)


@dataclass
class PatchResult:
    u: np.ndarray
    weight: float
    tau: float
    cluster: patching.PatchCluster
    degenerate: bool = False
    unreachable: bool = False


class AggregationBuffer:
    """Weighted sum and weight planes for blending overlapping patches."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self.weight = np.zeros(shape)

    def add(self, ref: patching.PatchRef, patch, weight: float):
        sl = ref.slices()
        self.total[sl] += weight * np.reshape(patch, (ref.side, ref.side))
        self.weight[sl] += weight


def aggregate(buffer: AggregationBuffer) -> np.ndarray:
    if np.any(buffer.weight <= 0):
        raise RuntimeError("coverage hole: pixel with zero aggregation weight")
    return buffer.total / buffer.weight


def update_noise(sigma_k: float, img_k, img_k1) -> float:
    """Next noise level assuming clean, current and next images are collinear."""
    a = as_image(img_k)
    b = as_image(img_k1)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    step = float(np.linalg.norm(a - b)) / math.sqrt(a.size)
    return max(0.0, sigma_k - step)


def prefiltered_image(img, side: int, stride: int, sigma: float, lam=patching.HARD_THRESHOLD,
                      coefficients=None) -> np.ndarray:
    """Coarse estimate: uniform blend of pre-filtered grid patches."""
    img = as_image(img)
    if coefficients is None:
        coefficients = patching.all_patch_coefficients(img, side, sigma, lam)
    buf = AggregationBuffer(img.shape)
    for ref in patching.target_grid(img, side, stride):
        patch = idctn(coefficients[ref.y0, ref.x0].reshape(side, side), norm="ortho")
        buf.add(ref, patch, 1.0)
    return aggregate(buf)


def prior_variance(img, sigma, params: OglrParams, coefficients=None) -> float:
    side, _, stride, _ = params.stage(sigma)
    coarse = prefiltered_image(img, side, stride, sigma, params.hard_threshold, coefficients)
    return gradient_stats.estimate_prior_variance(coarse)


def cluster_size(shape, side: int, k: int, radius: int) -> int:
    """``K`` capped so that every search window (the corner ones are the
    smallest) holds at least ``K - 1`` candidates."""
    ny = min(shape[0] - side + 1, radius + 1)
    nx = min(shape[1] - side + 1, radius + 1)
    return max(1, min(k, ny * nx))


def aggregation_weight(distances) -> float:
    d = np.asarray(distances, dtype=np.float64)
    if d.size <= 1:
        return 1.0
    return 1.0 / max(float(np.sum(d[1:])), WEIGHT_FLOOR)


def denoise_patch(img, target: patching.PatchRef, sigma: float, params: OglrParams,
                  c_i: float | None = None, sigma_p2: float | None = None,
                  coefficients=None) -> PatchResult:
    """Denoise one target patch; returns the patch and its blending weight."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    img = as_image(img)
    c_i = params.c_i if c_i is None else c_i
    _, k, _, radius = params.stage(sigma)
    side = target.side
    k = cluster_size(img.shape, side, k, radius)
    if coefficients is None:
        coefficients = patching.all_patch_coefficients(img, side, sigma, params.hard_threshold)
    if sigma_p2 is None:
        sigma_p2 = prior_variance(img, sigma, params)
    cluster = patching.find_similar(img, target, k, radius, sigma, coefficients=coefficients,
                                    lam=params.hard_threshold)
    stats = gradient_stats.gradient_stats(cluster.pixels, side, sigma_p2, params.nu)
    features = graph_core.build_features(cluster.pixels, side, stats, params.beta)
    z0 = cluster.pixels[0]
    eps = graph_core.kernel_bandwidth(z0, sigma)
    graph = graph_core.build_graph(features, eps, params.gamma, params.min_degree,
                                   include_self=params.include_self)
    lap = graph_core.laplacian(graph, dense=True)
    res = solver.solve_qcqp(lap, z0, c_i * sigma**2 * z0.size)
    return PatchResult(res.u, aggregation_weight(cluster.distances), res.tau, cluster,
                       res.degenerate, res.unreachable)


def _search_row(coef, norms, y0, xs, k, radius):
    """Nearest neighbours for targets sharing top-left row ``y0``.

    Candidates are shortlisted with the BLAS expansion
    ``|a|^2 + |b|^2 - 2 a.b`` then re-ranked on exact squared differences
    with raster-order tie-breaking, matching :func:`patching.find_similar`.
    """
    hh, ww, _ = coef.shape
    y_lo, y_hi = max(0, y0 - radius), min(hh - 1, y0 + radius)
    out_pos = np.empty((len(xs), k - 1, 2), dtype=np.int64)
    out_dist = np.empty((len(xs), k - 1))
    norm_max = float(np.max(norms))
    group = 16
    for g0 in range(0, len(xs), group):
        gx = xs[g0 : g0 + group]
        x_lo = max(0, gx[0] - radius)
        x_hi = min(ww - 1, gx[-1] + radius)
        block = coef[y_lo : y_hi + 1, x_lo : x_hi + 1]
        q = coef[y0, gx]
        approx = norms[y_lo : y_hi + 1, x_lo : x_hi + 1, None] + np.sum(q * q, axis=1) \
            - 2.0 * np.matmul(block, q.T)
        for n, x0 in enumerate(gx):
            a = max(0, x0 - radius) - x_lo
            b = min(ww - 1, x0 + radius) - x_lo
            sub = approx[:, a : b + 1, n].copy()
            sub[y0 - y_lo, x0 - x_lo - a] = np.inf
            flat = sub.ravel()
            avail = flat.size - 1
            if avail < k - 1:
                raise ValueError("search window holds fewer than K-1 candidates")
            want = k - 1
            # Keep everything within the expansion's rounding error of the
            # cut-off so that exact ties are all re-ranked.
            kth = np.partition(flat, want - 1)[want - 1]
            slack = 1e-7 * (norm_max + float(q[n] @ q[n]))
            cand = np.flatnonzero(flat <= kth + slack)
            ncol = b - a + 1
            cy = y_lo + cand // ncol
            cx = x_lo + a + cand % ncol
            exact = np.sum((coef[cy, cx] - q[n]) ** 2, axis=1)
            order = patching.rank_candidates(exact, cy, cx, ww, want)
            i = g0 + n
            out_pos[i, :, 0] = cy[order]
            out_pos[i, :, 1] = cx[order]
            out_dist[i] = exact[order]
    return out_pos, out_dist


def _solve_chunk(windows, ys, xs, pos, dist, side, sigma, sigma_p2, params, c_i):
    """Vectorized per-target pipeline for one chunk of targets."""
    b = len(ys)
    m = side * side
    k = pos.shape[1] + 1
    all_y = np.concatenate((ys[:, None], pos[:, :, 0]), axis=1)
    all_x = np.concatenate((xs[:, None], pos[:, :, 1]), axis=1)
    pixels = windows[all_y, all_x].reshape(b, k, m)
    z0 = pixels[:, 0]

    if k >= 2:
        g = gradient_stats.patch_gradients(pixels, side)
        var = np.concatenate((np.var(g.gx, axis=1, ddof=1), np.var(g.gy, axis=1, ddof=1)), axis=1)
        sigma_g2 = params.nu * var.mean(axis=1)
    else:
        sigma_g2 = np.zeros(b)
    denom = k + sigma_g2 / sigma_p2
    beta_g = sigma_g2 / denom + params.beta
    x, y = graph_core.pixel_coordinates(side)
    root = np.sqrt(beta_g)[:, None]
    vectors = np.stack((root * x, root * y, pixels.sum(axis=1) / denom[:, None]), axis=-1)
    eps = 0.04 * (sigma**2 + (z0.max(axis=1) - z0.min(axis=1)))
    lap = graph_core.batch_laplacians(vectors, eps, params.gamma, params.min_degree,
                                      params.include_self)
    lam, vec = np.linalg.eigh(lap)
    # Centre each patch; see solver.solve_qcqp.
    mean = z0.mean(axis=1, keepdims=True)
    zc = z0 - mean
    c = np.einsum("bmi,bm->bi", vec, zc)
    c2 = c * c
    target = np.full(b, c_i * sigma**2 * m)
    d_max = solver.max_discrepancy(lam, c2)
    degenerate = (d_max <= 1e-300) | (d_max <= 1e-14 * np.einsum("bm,bm->b", zc, zc))
    unreachable = ~degenerate & (target >= d_max)
    regular = ~degenerate & ~unreachable

    scale = np.zeros((b, m))
    if regular.any():
        tau, _ = solver.discrepancy_root(lam[regular], c2[regular], target[regular])
        scale[regular] = 1.0 / (1.0 + tau[:, None] * np.clip(lam[regular], 0.0, None))
    if unreachable.any():
        lmax = np.maximum(lam[unreachable].max(axis=1, keepdims=True), 1e-300)
        scale[unreachable] = (lam[unreachable] <= 1e-12 * lmax).astype(float)
    u = mean + np.einsum("bmi,bi->bm", vec, scale * c)
    u[degenerate] = z0[degenerate]

    if k >= 2:
        weights = 1.0 / np.maximum(dist.sum(axis=1), WEIGHT_FLOOR)
    else:
        weights = np.ones(b)
    return u, weights


def denoise_pass(img, sigma: float, params: OglrParams, c_i: float):
    """One pass over the target grid; returns ``(image, patch_count)``."""
    img = as_image(img)
    side, k, stride, radius = params.stage(sigma)
    refs = patching.target_grid(img, side, stride)
    k = cluster_size(img.shape, side, k, radius)
    coef = patching.all_patch_coefficients(img, side, sigma, params.hard_threshold)
    sigma_p2 = prior_variance(img, sigma, params, coefficients=coef)
    norms = np.einsum("yxm,yxm->yx", coef, coef)
    windows = sliding_window_view(img, (side, side))

    ys = np.array([r.y0 for r in refs])
    xs = np.array([r.x0 for r in refs])
    pos = np.empty((len(refs), k - 1, 2), dtype=np.int64)
    dist = np.empty((len(refs), k - 1))
    if k > 1:
        for y0 in np.unique(ys):
            sel = np.flatnonzero(ys == y0)
            p, d = _search_row(coef, norms, int(y0), xs[sel], k, radius)
            pos[sel] = p
            dist[sel] = d
    del coef, norms

    m = side * side
    chunk = max(1, _CHUNK_ELEMENTS // (3 * m * m))
    bounds = [(s, min(s + chunk, len(refs))) for s in range(0, len(refs), chunk)]

    def run(bound):
        s, e = bound
        return _solve_chunk(windows, ys[s:e], xs[s:e], pos[s:e], dist[s:e], side, sigma,
                            sigma_p2, params, c_i)

    if params.workers > 1:
        with ThreadPoolExecutor(params.workers) as pool:
            results = list(pool.map(run, bounds))
    else:
        results = [run(bd) for bd in bounds]

    # Reduction runs single-threaded in grid order so output is independent of scheduling.
    buf = AggregationBuffer(img.shape)
    for (s, e), (u, w) in zip(bounds, results):
        for n in range(e - s):
            buf.add(refs[s + n], u[n], w[n])
    return aggregate(buf), len(refs)


@dataclass
class IterationReport:
    iteration: int
    sigma: float
    c_i: float
    side: int
    k: int
    stride: int
    patches: int
    seconds: float
    sigma_next: float | None = None


@dataclass
class DenoiseReport:
    sigma: float
    gamma: float
    iterations: list = field(default_factory=list)
    psnr: float | None = None
    ssim: float | None = None

    def to_dict(self):
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path):
        cols = ["iteration", "sigma", "sigma_next", "c_i", "side", "k", "stride", "patches",
                "seconds"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for it in self.iterations:
                row = asdict(it)
                fh.write(",".join("" if row[c] is None else str(row[c]) for c in cols) + "\n")


def denoise_image(noisy, sigma: float, params: OglrParams | None = None, reference=None):
    """Run the full iterative denoiser.  Returns ``(image, DenoiseReport)``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    params = OglrParams() if params is None else params
    img = as_image(noisy)
    report = DenoiseReport(sigma=float(sigma), gamma=params.gamma)
    sigma_k = float(sigma)
    for it in range(params.max_iters):
        final = sigma_k**2 < params.sigma_th**2 or it == params.max_iters - 1
        c_i = params.c_i_final if final else params.c_i
        side, k, stride, _ = params.stage(sigma_k)
        t0 = time.perf_counter()
        if sigma_k > 0:
            out, count = denoise_pass(img, sigma_k, params, c_i)
        else:
            out, count = img.copy(), 0
        entry = IterationReport(it, sigma_k, c_i, side, k, stride, count,
                                time.perf_counter() - t0)
        report.iterations.append(entry)
        if final:
            img = out
            break
        entry.sigma_next = update_noise(sigma_k, img, out)
        log.info("iteration %d: sigma %.3f -> %.3f (%d patches, %.1fs)", it, sigma_k,
                 entry.sigma_next, count, entry.seconds)
        img, sigma_k = out, entry.sigma_next
    if reference is not None:
        report.psnr = psnr(reference, img)
        report.ssim = ssim(reference, img)
    return img, report


def default_workers() -> int:
    env = os.environ.get("OGLR_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
