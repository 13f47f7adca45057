"""Patch gradients, gradient-noise statistics, 2x2 metric spaces and the
scalar diffusivities that govern edge behaviour.

The metric space of a pixel is an SPD matrix ``G``; the regularizer
penalizes a gradient ``v`` by the Mahalanobis form ``v^T G^{-1} v``.  For
the MMSE-optimal choice ``G = g g^T + beta_G I`` the across-edge
diffusivity changes sign at the contrast parameter when ``gamma < 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Floor applied to the global prior variance of true gradients.
PRIOR_VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray


@dataclass(frozen=True)
class GradientStats:
    sigma_g2: float
    sigma_p2: float
    g_tilde: np.ndarray
    sigma_tilde2: float


def patch_gradients(patch, side: int) -> GradientField:
    """Forward differences ``[1 -1]`` with a zero last difference.

    ``gx[i, j] = p[i, j+1] - p[i, j]`` and ``gy[i, j] = p[i+1, j] - p[i, j]``;
    both are returned flattened row-major.  Accepts a leading batch axis.
    """
    if side < 2:
        raise ValueError("patch side must be >= 2")
    p = np.asarray(patch, dtype=np.float64)
    p = p.reshape(p.shape[:-1] + (side, side))
    gx = np.zeros_like(p)
    gy = np.zeros_like(p)
    gx[..., :, :-1] = p[..., :, 1:] - p[..., :, :-1]
    gy[..., :-1, :] = p[..., 1:, :] - p[..., :-1, :]
    flat = p.shape[:-2] + (side * side,)
    return GradientField(gx.reshape(flat), gy.reshape(flat))


def image_gradients(img):
    """Whole-image forward differences with the same edge rule."""
    img = np.asarray(img, dtype=np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return gx, gy


def sigma_g_from_gradients(gx, gy, nu: float = 1.0) -> float:
    """``nu`` times the mean of the 2M per-pixel gradient sample variances.

    ``gx`` and ``gy`` are ``(K, M)``: one row of gradients per cluster
    member.  Variances use the unbiased ``K - 1`` divisor.
    """
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    if gx.shape != gy.shape or gx.ndim != 2:
        raise ValueError("gx and gy must be matching (K, M) arrays")
    if gx.shape[0] < 2:
        raise ValueError("insufficient cluster: need at least 2 patches")
    var_x = np.var(gx, axis=0, ddof=1)
    var_y = np.var(gy, axis=0, ddof=1)
    return float(nu * np.mean(np.concatenate((var_x, var_y))))


def estimate_sigma_g(patches, side: int, nu: float = 1.0) -> float:
    """Gradient-noise variance of a ``(K, M)`` cluster of patches."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] < 2:
        raise ValueError("insufficient cluster: need at least 2 patches")
    g = patch_gradients(patches, side)
    return sigma_g_from_gradients(g.gx, g.gy, nu)


def shrinkage_denominator(k, sigma_g2, sigma_p2):
    """``K + sigma_g^2 / sigma_p^2``, shared by the posterior mean and f3."""
    if not sigma_p2 > 0:
        raise ValueError("sigma_p2 must be > 0")
    return k + sigma_g2 / sigma_p2


def posterior_gradient(fields, sigma_g2: float, sigma_p2: float):
    """Posterior mean gradient field and posterior variance.

    ``fields`` is a sequence of :class:`GradientField` (one per cluster
    member).  Returns ``(g_tilde, sigma_tilde2)`` where ``g_tilde`` has
    shape ``(M, 2)``.
    """
    fields = list(fields)
    if not fields:
        raise ValueError("need at least one gradient field")
    denom = shrinkage_denominator(len(fields), sigma_g2, sigma_p2)
    sx = np.sum([f.gx for f in fields], axis=0)
    sy = np.sum([f.gy for f in fields], axis=0)
    g_tilde = np.stack((sx, sy), axis=-1) / denom
    return g_tilde, sigma_g2 / denom


def gradient_stats(patches, side, sigma_p2, nu=1.0) -> GradientStats:
    """Bundle sigma_g^2, the posterior mean gradient and posterior variance."""
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    sigma_g2 = estimate_sigma_g(patches, side, nu) if len(patches) >= 2 else 0.0
    g = patch_gradients(patches, side)
    fields = [GradientField(g.gx[k], g.gy[k]) for k in range(len(patches))]
    g_tilde, s2 = posterior_gradient(fields, sigma_g2, sigma_p2)
    return GradientStats(sigma_g2, sigma_p2, g_tilde, s2)


def estimate_prior_variance(img) -> float:
    """Sample variance of all gradient components of ``img``, floored."""
    gx, gy = image_gradients(img)
    comps = np.concatenate((gx.ravel(), gy.ravel()))
    return max(float(np.var(comps, ddof=1)), PRIOR_VARIANCE_FLOOR)


@dataclass(frozen=True)
class MetricSpace2x2:
    """Symmetric positive-definite ``[[g11, g12], [g12, g22]]``.

    Eigen-parameters follow ``G = alpha U(theta) diag(mu, 1/mu) U(theta)^T``
    with skewness ``mu >= 1``, major direction ``theta`` in ``[0, pi)`` and
    scaling ``alpha = sqrt(det G)``.
    """

    g11: float
    g12: float
    g22: float

    def __post_init__(self):
        if not (self.g11 > 0 and self.det > 0):
            raise ValueError("metric is not positive definite")

    @classmethod
    def from_matrix(cls, g):
        g = np.asarray(g, dtype=np.float64)
        return cls(float(g[0, 0]), float(0.5 * (g[0, 1] + g[1, 0])), float(g[1, 1]))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.g11, self.g12], [self.g12, self.g22]])

    @property
    def det(self) -> float:
        return self.g11 * self.g22 - self.g12 * self.g12

    @property
    def eigenvalues(self):
        """``(major, minor)`` eigenvalues."""
        half_tr = 0.5 * (self.g11 + self.g22)
        rad = np.hypot(0.5 * (self.g11 - self.g22), self.g12)
        major = half_tr + rad
        # det / major avoids cancellation for nearly rank-one metrics.
        return major, self.det / major

    @property
    def alpha(self) -> float:
        return float(np.sqrt(self.det))

    @property
    def mu(self) -> float:
        major, minor = self.eigenvalues
        return float(np.sqrt(major / minor))

    @property
    def theta(self) -> float:
        if self.g12 == 0.0 and self.g11 >= self.g22:
            return 0.0
        t = 0.5 * np.arctan2(2.0 * self.g12, self.g11 - self.g22)
        return float(np.mod(t, np.pi))

    def reconstruct(self) -> np.ndarray:
        """``alpha U diag(mu, 1/mu) U^T`` from the eigen-parameters."""
        c, s = np.cos(self.theta), np.sin(self.theta)
        u = np.array([[c, -s], [s, c]])
        return self.alpha * u @ np.diag([self.mu, 1.0 / self.mu]) @ u.T


def ideal_metric(g, beta: float) -> MetricSpace2x2:
    """``g g^T + beta I`` for a known true gradient ``g``."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    g = np.asarray(g, dtype=np.float64)
    return MetricSpace2x2.from_matrix(np.outer(g, g) + beta * np.eye(2))


def optimal_metric(g_tilde, beta_g: float) -> MetricSpace2x2:
    """MMSE metric ``g~ g~^T + beta_G I`` with ``beta_G = sigma~^2 + beta``."""
    return ideal_metric(g_tilde, beta_g)


def metric_norm(metric: MetricSpace2x2, v) -> float:
    """``v^T G^{-1} v``."""
    g = metric.matrix
    if metric.det <= 1e-14 * np.trace(g) ** 2:
        raise ValueError("metric is numerically singular")
    v = np.asarray(v, dtype=np.float64)
    return float(v @ np.linalg.solve(g, v))


def diffusion_eigenvalues(norm_g, beta_g, gamma):
    """Along-gradient and across-gradient eigenvalues of the diffusion tensor."""
    if not np.all(np.asarray(beta_g) > 0):
        raise ValueError("beta_G must be > 0")
    base = 1.0 + np.square(norm_g) / np.square(beta_g)
    return base ** (gamma - 1.5), base ** (gamma - 0.5)


def flux(norm_g, beta_g, gamma):
    """Flux ``J1(x) = lambda1(x) * x``."""
    lam1, _ = diffusion_eigenvalues(norm_g, beta_g, gamma)
    return lam1 * np.asarray(norm_g, dtype=np.float64)


def flux_derivative(norm_g, beta_g, gamma):
    """Across-edge diffusivity ``dJ1/dx``; negative means backward diffusion."""
    if not np.all(np.asarray(beta_g) > 0):
        raise ValueError("beta_G must be > 0")
    q = np.square(norm_g) / np.square(beta_g)
    return (1.0 + q) ** (gamma - 2.5) * (1.0 + 2.0 * (gamma - 1.0) * q)


def contrast_parameter(beta_g, gamma):
    """Gradient magnitude where across-edge diffusion changes sign."""
    if gamma >= 1:
        raise ValueError("no backward regime for gamma >= 1")
    if not beta_g > 0:
        raise ValueError("beta_G must be > 0")
    return beta_g / np.sqrt(2.0 * (1.0 - gamma))
