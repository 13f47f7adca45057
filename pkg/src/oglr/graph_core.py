"""Exemplar features, neighborhood graphs, Laplacians and the regularizer.

Each vertex is a pixel with feature vector ``v_i = (f1[i], f2[i], f3[i])``.
Edge weights are a thresholded Gaussian of the feature distance,
renormalized by vertex degrees::

    psi(d)  = exp(-d^2 / (2 eps^2))  if d <= r else 0
    rho_i   = sum_j psi(d_ij)
    w_ij    = (rho_i rho_j)^(-gamma) psi(d_ij)

By default ``rho_i`` includes the ``j = i`` term ``psi(0) = 1``; pass
``include_self=False`` to drop it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .gradient_stats import GradientStats, shrinkage_denominator

#: Minimum number of edges per vertex used to pick the radius ``r``.
MIN_DEGREE = 4

#: Above this many vertices :func:`laplacian` returns a sparse matrix.
DENSE_LIMIT = 1024


@dataclass(frozen=True)
class FeatureSet:
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    beta_g: float

    @property
    def vectors(self) -> np.ndarray:
        """``(M, 3)`` array of per-pixel feature vectors."""
        return np.column_stack((self.f1, self.f2, self.f3))


def pixel_coordinates(side: int, width: int | None = None):
    """Row-major ``(x, y)`` coordinates of a ``side`` x ``width`` grid."""
    width = side if width is None else width
    y, x = np.divmod(np.arange(side * width), width)
    return x.astype(np.float64), y.astype(np.float64)


def exemplar_features(pixels, side: int, beta_g: float, denom: float,
                      width: int | None = None) -> FeatureSet:
    """Spatial features scaled by ``sqrt(beta_G)``; intensity feature is
    the cluster sum divided by ``denom``."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    x, y = pixel_coordinates(side, width)
    scale = np.sqrt(beta_g)
    return FeatureSet(scale * x, scale * y, pixels.sum(axis=0) / denom, float(beta_g))


def build_features(cluster_pixels, side: int, stats: GradientStats, beta: float) -> FeatureSet:
    """Optimal exemplar features for a cluster ``(K, M)`` of patches."""
    cluster_pixels = np.atleast_2d(np.asarray(cluster_pixels, dtype=np.float64))
    if cluster_pixels.shape[0] < 1:
        raise ValueError("empty cluster")
    beta_g = stats.sigma_tilde2 + beta
    denom = shrinkage_denominator(cluster_pixels.shape[0], stats.sigma_g2, stats.sigma_p2)
    return exemplar_features(cluster_pixels, side, beta_g, denom)


def kernel_bandwidth(z0, sigma: float) -> float:
    """Bandwidth 0.04 * (sigma^2 + intensity range of the target patch)."""
    z0 = np.asarray(z0, dtype=np.float64)
    return 0.04 * (sigma**2 + float(z0.max() - z0.min()))


@dataclass
class PatchGraph:
    """Undirected weighted graph stored as an edge list with ``i < j``."""

    m: int
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    degrees: np.ndarray
    epsilon: float
    r: float
    gamma: float

    @property
    def edges(self):
        return list(zip(self.i.tolist(), self.j.tolist(), self.w.tolist()))

    def edge_sum(self, u) -> float:
        """``sum_{(i,j) in E} w_ij (u_i - u_j)^2``."""
        u = np.asarray(u, dtype=np.float64)
        return float(np.sum(self.w * (u[self.i] - u[self.j]) ** 2))

    def dump(self, fh) -> None:
        """Write ``i j w_ij`` lines (12 significant digits) to a text stream."""
        for a, b, w in zip(self.i, self.j, self.w):
            fh.write(f"{a} {b} {w:.12g}\n")


def _finish_graph(m, ii, jj, d2, r, epsilon, gamma, include_self):
    psi = np.exp(-d2 / (2.0 * epsilon**2))
    rho = np.full(m, 1.0 if include_self else 0.0)
    np.add.at(rho, ii, psi)
    np.add.at(rho, jj, psi)
    w = (rho[ii] * rho[jj]) ** (-gamma) * psi
    keep = w > 0
    ii, jj, w = ii[keep], jj[keep], w[keep]
    degrees = np.zeros(m)
    np.add.at(degrees, ii, w)
    np.add.at(degrees, jj, w)
    return PatchGraph(m, ii, jj, w, degrees, float(epsilon), float(r), float(gamma))


def build_graph(features, epsilon: float, gamma: float, min_degree: int = MIN_DEGREE,
                r: float | None = None, include_self: bool = True) -> PatchGraph:
    """Fully-connected candidate graph over ``features`` (``FeatureSet`` or
    an ``(M, N)`` array).

    When ``r`` is None it is the smallest distance giving every vertex at
    least ``min(min_degree, M - 1)`` neighbors.
    """
    v = features.vectors if isinstance(features, FeatureSet) else np.asarray(features, float)
    m = v.shape[0]
    if m < 2:
        raise ValueError("graph needs at least 2 vertices")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    diff = v[:, None, :] - v[None, :, :]
    d2 = np.einsum("ijn,ijn->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    if r is None:
        kth = min(min_degree, m - 1)
        r2 = float(np.max(np.partition(d2, kth - 1, axis=1)[:, kth - 1]))
    else:
        r2 = float(r) ** 2
    ii, jj = np.triu_indices(m, k=1)
    pd2 = d2[ii, jj]
    sel = pd2 <= r2
    return _finish_graph(m, ii[sel], jj[sel], pd2[sel], np.sqrt(r2), epsilon, gamma, include_self)


def build_local_graph(features, shape, epsilon: float, gamma: float, window: int = 3,
                      min_degree: int = MIN_DEGREE, include_self: bool = True,
                      r: float | None = None) -> PatchGraph:
    """Graph over an image-shaped vertex grid with candidate edges limited to
    pixel pairs within Chebyshev distance ``window``.

    ``r`` defaults to the min-degree rule over those candidates; pass
    ``np.inf`` to keep every candidate edge.
    """
    v = features.vectors if isinstance(features, FeatureSet) else np.asarray(features, float)
    h, w = shape
    m = h * w
    if m < 2:
        raise ValueError("graph needs at least 2 vertices")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    idx = np.arange(m).reshape(h, w)
    offsets = [(dy, dx) for dy in range(-window, window + 1)
               for dx in range(-window, window + 1) if (dy, dx) != (0, 0)]
    nbr = np.full((m, len(offsets)), -1, dtype=np.int64)
    for c, (dy, dx) in enumerate(offsets):
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        yt = slice(max(0, dy), h - max(0, -dy))
        xt = slice(max(0, dx), w - max(0, -dx))
        nbr[idx[ys, xs].ravel(), c] = idx[yt, xt].ravel()
    valid = nbr >= 0
    diff = v[:, None, :] - v[np.where(valid, nbr, 0)]
    d2 = np.where(valid, np.sum(diff * diff, axis=-1), np.inf)
    if r is None:
        kth = min(min_degree, int(valid.sum(axis=1).min()))
        r2 = float(np.max(np.partition(d2, kth - 1, axis=1)[:, kth - 1]))
    else:
        r2 = float(r) ** 2
    rows = np.broadcast_to(np.arange(m)[:, None], nbr.shape)
    sel = valid & (nbr > rows) & (d2 <= r2)
    return _finish_graph(m, rows[sel], nbr[sel], d2[sel], np.sqrt(r2), epsilon, gamma, include_self)


def build_radius_graph(features, epsilon: float, r: float, gamma: float,
                       include_self: bool = True) -> PatchGraph:
    """Plain r-neighborhood graph for large vertex sets (k-d tree search)."""
    v = features.vectors if isinstance(features, FeatureSet) else np.asarray(features, float)
    m = v.shape[0]
    if m < 2:
        raise ValueError("graph needs at least 2 vertices")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    pairs = cKDTree(v).query_pairs(r, output_type="ndarray")
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    ii, jj = pairs[:, 0], pairs[:, 1]
    diff = v[ii] - v[jj]
    d2 = np.einsum("en,en->e", diff, diff)
    return _finish_graph(m, ii, jj, d2, r, epsilon, gamma, include_self)


def laplacian(graph: PatchGraph, dense: bool | None = None):
    """``L = D - A``; dense ndarray for small graphs, CSR otherwise."""
    if dense is None:
        dense = graph.m <= DENSE_LIMIT
    m = graph.m
    rows = np.concatenate((graph.i, graph.j, np.arange(m)))
    cols = np.concatenate((graph.j, graph.i, np.arange(m)))
    vals = np.concatenate((-graph.w, -graph.w, graph.degrees))
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    return mat.toarray() if dense else mat


def regularizer_value(lap, u) -> float:
    """``u^T L u``."""
    u = np.asarray(u, dtype=np.float64)
    if lap.shape != (u.size, u.size):
        raise ValueError(f"dimension mismatch: L is {lap.shape}, u has {u.size} entries")
    return float(u @ (lap @ u))


def batch_laplacians(vectors, epsilon, gamma: float, min_degree: int = MIN_DEGREE,
                     include_self: bool = True) -> np.ndarray:
    """Dense Laplacians for a stack of feature sets.

    ``vectors`` has shape ``(B, M, N)`` and ``epsilon`` shape ``(B,)``.
    Same construction as :func:`build_graph` with the min-degree radius.
    """
    v = np.asarray(vectors, dtype=np.float64)
    b, m, _ = v.shape
    eps = np.asarray(epsilon, dtype=np.float64).reshape(b, 1, 1)
    diff = v[:, :, None, :] - v[:, None, :, :]
    d2 = np.einsum("bijn,bijn->bij", diff, diff)
    del diff
    diag = np.arange(m)
    d2[:, diag, diag] = np.inf
    kth = min(min_degree, m - 1)
    r2 = np.partition(d2, kth - 1, axis=2)[:, :, kth - 1].max(axis=1)
    psi = np.exp(-d2 / (2.0 * eps**2))
    psi[d2 > r2[:, None, None]] = 0.0
    rho = psi.sum(axis=2) + (1.0 if include_self else 0.0)
    wgt = psi * (rho[:, :, None] * rho[:, None, :]) ** (-gamma)
    lap = -wgt
    lap[:, diag, diag] = wgt.sum(axis=2)
    return lap
