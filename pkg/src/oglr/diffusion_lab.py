"""Numerical checks of the continuous-domain behaviour of the regularizer.

* Synthetic Glow/Disk images and an iterative whole-image graph filter for
  comparing normalization exponents ``gamma``.
* Midpoint quadrature of the anisotropic Dirichlet energy
  ``int grad(u)^T G^-1 grad(u) (sqrt det G)^(2 gamma - 1) ds``.
* A convergence experiment comparing the normalized graph regularizer on
  random samples of the unit square with that quadrature.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import graph_core, solver
from .gradient_stats import image_gradients

#: Spatial feature scale used by the synthetic filter.
SYNTH_SQRT_BETA_G = 0.02

#: Default radius multiplier ``r = C_r * eps`` in the convergence experiment.
DEFAULT_C_R = 2.0

#: Hoelder order used in the bandwidth schedule ``eps = M^(-kappa / (4 (kappa + 2)))``.
KAPPA = 3


def make_glow(size: int = 100, std: float = 15.0) -> np.ndarray:
    """Centered isotropic Gaussian bump with peak 255."""
    if size < 3:
        raise ValueError("size must be >= 3")
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size]
    r2 = (x - c) ** 2 + (y - c) ** 2
    return 255.0 * np.exp(-r2 / (2.0 * std**2))


def _radius_map(size):
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size]
    return np.hypot(x - c, y - c)


def make_disk(size: int = 100, radius: float = 15.0) -> np.ndarray:
    """255 strictly inside ``radius`` of the image center, 0 elsewhere."""
    if size < 2 * radius:
        raise ValueError("size must be >= 2 * radius")
    return np.where(_radius_map(size) < radius, 255.0, 0.0)


def boundary_sharpness(img, radius: float = 15.0, band: float = 2.0) -> float:
    """Largest forward-difference gradient magnitude within ``band`` pixels
    of the circle of the given radius around the image center."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] != img.shape[1]:
        raise ValueError("expected a square image")
    gx, gy = image_gradients(img)
    mag = np.hypot(gx, gy)
    ring = np.abs(_radius_map(img.shape[0]) - radius) <= band
    return float(mag[ring].max())


def synthetic_bandwidth(z0, sigma2: float = 1.0) -> float:
    return 0.04 * (sigma2 + float(np.max(z0) - np.min(z0)))


def filter_synthetic(img, gamma: float, iters: int = 40, sqrt_beta_g: float = SYNTH_SQRT_BETA_G,
                     epsilon: float | None = None, window: int = 3,
                     include_self: bool = True, r: float | None = None) -> np.ndarray:
    """Filter a noiseless image treated as one patch with a one-member cluster.

    Each iteration rebuilds the graph from the previous result (spatial
    features ``sqrt_beta_g * (x, y)``, intensity feature the image itself)
    and removes a squared residual of ``1 * 1 * M`` (unit noise variance,
    unit removal fraction).  ``epsilon`` defaults to the natural-image
    recipe with unit variance, ``0.04 * (1 + range)``.
    """
    u = np.asarray(img, dtype=np.float64).copy()
    h, w = u.shape
    x, y = graph_core.pixel_coordinates(h, w)
    target = float(u.size)
    for _ in range(iters):
        z0 = u.ravel()
        if np.ptp(z0) == 0:
            break
        eps = synthetic_bandwidth(z0) if epsilon is None else epsilon
        feats = np.column_stack((sqrt_beta_g * x, sqrt_beta_g * y, z0))
        graph = graph_core.build_local_graph(feats, (h, w), eps, gamma, window=window,
                                             include_self=include_self, r=r)
        lap = graph_core.laplacian(graph, dense=False)
        res = solver.solve_qcqp_sparse(lap, z0, target)
        u = res.u.reshape(h, w)
    return u


def continuous_dirichlet_energy(u, g_field, gamma: float, cell_area: float,
                                spacing: float | None = None) -> float:
    """Midpoint-rule quadrature of the anisotropic Dirichlet energy.

    ``u`` holds cell-center samples on a uniform grid, ``g_field`` is an
    ``(H, W, 2, 2)`` array of SPD metrics (or a single ``(2, 2)`` matrix).
    Gradients are central differences (one-sided at the border) with grid
    spacing ``sqrt(cell_area)`` unless ``spacing`` is given.  Axis 1 of
    ``u`` is ``x``.
    """
    u = np.asarray(u, dtype=np.float64)
    h = math.sqrt(cell_area) if spacing is None else spacing
    g = np.asarray(g_field, dtype=np.float64)
    g = np.broadcast_to(g, u.shape + (2, 2))
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    scale = np.abs(g).reshape(u.shape + (4,)).max(axis=-1)
    if np.any(det <= 1e-14 * scale**2) or np.any(g[..., 0, 0] <= 0):
        raise ValueError("singular metric cell")
    uy, ux = np.gradient(u, h, h, edge_order=2) if min(u.shape) > 2 else np.gradient(u, h, h)
    # G^-1 v via the adjugate.
    vx = (g[..., 1, 1] * ux - g[..., 0, 1] * uy) / det
    vy = (-g[..., 1, 0] * ux + g[..., 0, 0] * uy) / det
    density = (ux * vx + uy * vy) * np.sqrt(det) ** (2.0 * gamma - 1.0)
    return float(np.sum(density) * cell_area)


@dataclass
class ConvergenceTrial:
    m: int
    epsilon: float
    s_g: float
    s_g_normalized: float
    s_omega: float
    ratio: float


def _candidate(kind):
    if kind == "ramp":
        return lambda x, y: x
    if kind == "sinusoid":
        return lambda x, y: np.sin(np.pi * x) * np.cos(np.pi * y)
    if kind == "constant":
        return lambda x, y: np.zeros_like(x)
    raise ValueError(f"unknown candidate function: {kind}")


def _exemplars(kind):
    """``(features(x, y) -> (M, N), metric(x, y) -> (..., 2, 2))``."""
    if kind == "identity":
        def feats(x, y):
            return np.column_stack((x, y))

        def metric(x, y):
            return np.broadcast_to(np.eye(2), np.shape(x) + (2, 2))
    elif kind == "curved":
        # f = (x, y, x^2): G = I + diag(4 x^2, 0).
        def feats(x, y):
            return np.column_stack((x, y, x * x))

        def metric(x, y):
            g = np.zeros(np.shape(x) + (2, 2))
            g[..., 0, 0] = 1.0 + 4.0 * x * x
            g[..., 1, 1] = 1.0
            return g
    else:
        raise ValueError(f"unknown exemplar kind: {kind}")
    return feats, metric


def convergence_bandwidth(m: int, kappa: int = KAPPA) -> float:
    return float(m) ** (-kappa / (4.0 * (kappa + 2)))


def normalization(m: int, epsilon: float, gamma: float) -> float:
    """``M^(2 gamma - 1) / (eps^(4 (1 - gamma)) (M - 1))``."""
    return m ** (2.0 * gamma - 1.0) / (epsilon ** (4.0 * (1.0 - gamma)) * (m - 1))


def convergence_experiment(exemplar_kind: str = "identity", m_list=(500, 1000, 2000, 4000, 8000),
                           gamma: float = 1.0, c_r: float = DEFAULT_C_R, candidate: str = "ramp",
                           seed: int = 0, quad_n: int = 400, scale: float = 1.0) -> list:
    """Normalized graph regularizer versus its continuous counterpart.

    For each ``M``: draw ``M`` uniform points on the unit square (seed
    ``seed + M``), build the ``r``-neighborhood graph with
    ``eps = M^(-3/20)`` and ``r = c_r * eps``, and compare the normalized
    ``u^T L u`` with a ``quad_n`` x ``quad_n`` midpoint quadrature.
    """
    m_list = [int(m) for m in m_list]
    if any(m < 2 for m in m_list) or m_list != sorted(m_list):
        raise ValueError("m_list must be increasing with every M >= 2")
    feats, metric = _exemplars(exemplar_kind)
    ufun = _candidate(candidate)

    centers = (np.arange(quad_n) + 0.5) / quad_n
    qx, qy = np.meshgrid(centers, centers)
    s_omega = scale**2 * continuous_dirichlet_energy(ufun(qx, qy), metric(qx, qy), gamma,
                                                     1.0 / quad_n**2)

    trials = []
    for m in m_list:
        rng = np.random.Generator(np.random.PCG64(seed + m))
        pts = rng.random((m, 2))
        eps = convergence_bandwidth(m)
        graph = graph_core.build_radius_graph(feats(pts[:, 0], pts[:, 1]), eps, c_r * eps, gamma)
        u = scale * ufun(pts[:, 0], pts[:, 1])
        s_g = graph.edge_sum(u)
        norm = normalization(m, eps, gamma) * s_g
        ratio = norm / s_omega if s_omega > 0 else 0.0
        trials.append(ConvergenceTrial(m, eps, s_g, norm, s_omega, ratio))
    return trials


def write_trials_csv(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow([f.name for f in fields(ConvergenceTrial)])
        for t in trials:
            out.writerow(astuple(t))
