"""Per-patch quadratic solves.

The unconstrained problem ``min ||u - z0||^2 + tau u^T L u`` has the
closed form ``u = (I + tau L)^{-1} z0``.  The constrained form fixes the
residual energy instead: find ``tau`` such that ``||u(tau) - z0||^2``
equals a target.  With ``L = V diag(lam) V^T`` and ``c = V^T z0``::

    D(tau) = sum_i (tau lam_i / (1 + tau lam_i))^2 c_i^2

which increases monotonically from 0 to the energy of ``z0`` outside the
null space of ``L``.  The root is found by Newton iteration on
``1/sqrt(D)`` in the variable ``1/tau`` (see :func:`discrepancy_root`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

#: Relative tolerance on the discrepancy used by :func:`solve_qcqp`.
DISCREPANCY_RTOL = 1e-10

MAX_NEWTON = 200


@dataclass
class QcqpResult:
    u: np.ndarray
    tau: float
    residual: float
    iterations: int
    unreachable: bool = False
    degenerate: bool = False


def solve_qp(lap, z0, tau: float) -> np.ndarray:
    """``(I + tau L)^{-1} z0`` via Cholesky (sparse LU for sparse ``L``)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    z0 = np.asarray(z0, dtype=np.float64)
    if tau == 0:
        return z0.copy()
    # Constants are in the null space of any Laplacian; solving for the
    # centred signal keeps the result exactly shift-equivariant.
    mean = z0.mean()
    if sparse.issparse(lap):
        a = sparse.identity(z0.size, format="csc") + tau * sparse.csc_matrix(lap)
        return mean + splu(a).solve(z0 - mean)
    a = np.eye(z0.size) + tau * np.asarray(lap)
    return mean + linalg.cho_solve(linalg.cho_factor(a, lower=True, check_finite=False),
                                   z0 - mean, check_finite=False)


def _secular(t, lam, c2):
    """``D`` and ``dD/dt`` at ``t = 1/tau``; zero eigenvalues contribute 0."""
    pos = lam > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pos, lam / (lam + t[:, None]), 0.0)
        d = np.sum(ratio * ratio * c2, axis=1)
        dd = -2.0 * np.sum(np.where(pos, ratio * ratio / (lam + t[:, None]), 0.0) * c2, axis=1)
    return d, dd


def discrepancy_root(lam, c2, target, rtol=DISCREPANCY_RTOL, max_iter=MAX_NEWTON):
    """Solve ``D(tau) = target`` for a batch of spectra.

    ``lam`` and ``c2`` are ``(B, M)`` eigenvalues of ``L`` and squared
    spectral coefficients of ``z0``; ``target`` is ``(B,)`` with
    ``0 < target < D(inf)`` per row.  Returns ``(tau, iterations)``.

    In ``t = 1/tau`` the discrepancy is ``sum (lam/(lam+t))^2 c^2``, the
    secular function of a trust-region subproblem, so ``1/sqrt(D(t))`` is
    concave and Newton from ``t = 0`` increases monotonically to the root.
    """
    lam = np.asarray(lam, dtype=np.float64)
    scale = np.maximum(lam.max(axis=1, keepdims=True), 1e-300)
    lam = np.where(lam > 1e-12 * scale, lam, 0.0)
    c2 = np.asarray(c2, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    b = target.shape[0]
    t = np.zeros(b)
    iters = np.zeros(b, dtype=np.int64)
    todo = np.ones(b, dtype=bool)
    inv_sqrt_target = 1.0 / np.sqrt(target)
    for _ in range(max_iter):
        idx = np.flatnonzero(todo)
        if idx.size == 0:
            break
        t_old = t[idx]
        d, dd = _secular(t_old, lam[idx], c2[idx])
        done = np.abs(d - target[idx]) <= rtol * target[idx]
        phi = 1.0 / np.sqrt(d) - inv_sqrt_target[idx]
        dphi = -0.5 * dd / (d * np.sqrt(d))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = t_old - phi / dphi
        step = np.where(np.isfinite(step), np.maximum(step, t_old), t_old)
        t[idx] = np.where(done, t_old, step)
        iters[idx] += ~done
        todo[idx[done]] = False
        # A stalled row (no progress in floating point) is as close as it gets.
        stalled = ~done & (step == t_old)
        todo[idx[stalled]] = False
    with np.errstate(divide="ignore"):
        tau = 1.0 / t
    return tau, iters


def max_discrepancy(lam, c2, rel_null=1e-12):
    """``D(inf)``: energy of ``z0`` outside the numerical null space."""
    lam = np.asarray(lam)
    scale = np.maximum(lam.max(axis=-1, keepdims=True), 1e-300)
    return np.sum(np.where(lam > rel_null * scale, c2, 0.0), axis=-1)


def solve_qcqp(lap, z0, target: float, rtol: float = DISCREPANCY_RTOL) -> QcqpResult:
    """Minimize ``u^T L u`` subject to ``||u - z0||^2 == target``.

    Returns ``u = z0`` with ``tau = 0`` for a zero target or when the
    discrepancy is identically zero (``z0`` in the null space).  A target at
    or above the largest reachable discrepancy yields the fully smoothed
    projection with ``unreachable`` set.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if target < 0:
        raise ValueError("target must be >= 0")
    lap = lap.toarray() if sparse.issparse(lap) else np.asarray(lap, dtype=np.float64)
    lam, vec = np.linalg.eigh(lap)
    # Work on the centred signal: the constant vector is an exact null vector,
    # while eigh only resolves it to eps |L| / lam_2 on near-disconnected graphs.
    mean = z0.mean()
    zc = z0 - mean
    c = vec.T @ zc
    c2 = c * c
    d_max = float(max_discrepancy(lam[None], c2[None])[0])
    if d_max <= 1e-300 or d_max <= 1e-14 * float(zc @ zc):
        return QcqpResult(z0.copy(), 0.0, abs(target), 0, unreachable=target > 0, degenerate=True)
    if target == 0:
        return QcqpResult(z0.copy(), 0.0, 0.0, 0)
    if target >= d_max:
        null = lam <= 1e-12 * max(lam.max(), 1e-300)
        u = mean + vec[:, null] @ c[null]
        resid = abs(float(np.sum((u - z0) ** 2)) - target)
        return QcqpResult(u, np.inf, resid, 0, unreachable=True)
    tau, iters = discrepancy_root(lam[None], c2[None], np.array([target]), rtol)
    tau = float(tau[0])
    # Spectral form: refactoring I + tau L loses digits when tau is huge.
    u = mean + vec @ (c / (1.0 + tau * np.clip(lam, 0.0, None)))
    resid = abs(float(np.sum((u - z0) ** 2)) - target)
    return QcqpResult(u, tau, resid, int(iters[0]))


def solve_qcqp_sparse(lap, z0, target: float, rtol: float = 1e-8,
                      max_iter: int = MAX_NEWTON) -> QcqpResult:
    """Large sparse variant: Newton on ``tau`` with one LU per step.

    ``dD/dtau = -2 (u - z0)^T (I + tau L)^{-1} L u``.  The reachable
    maximum is the energy of ``z0`` about its per-component means, found
    from the graph's connected components.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    lap = sparse.csc_matrix(lap)
    if target < 0:
        raise ValueError("target must be >= 0")
    if target == 0:
        return QcqpResult(z0.copy(), 0.0, 0.0, 0)
    adj = lap - sparse.diags(lap.diagonal())
    ncomp, labels = connected_components(adj != 0, directed=False)
    means = np.bincount(labels, z0, ncomp) / np.bincount(labels, minlength=ncomp)
    flat = means[labels]
    d_max = float(np.sum((z0 - flat) ** 2))
    if d_max <= 1e-14 * max(float(z0 @ z0), 1e-300):
        return QcqpResult(z0.copy(), 0.0, abs(target), 0, unreachable=True, degenerate=True)
    if target >= d_max:
        return QcqpResult(flat, np.inf, abs(d_max - target), 0, unreachable=True)
    eye = sparse.identity(z0.size, format="csc")

    def evaluate(tau):
        lu = splu(eye + tau * lap)
        u = lu.solve(z0)
        r = u - z0
        du = -lu.solve(lap @ u)
        return u, float(r @ r), float(2.0 * r @ du)

    lo, hi = 0.0, 1.0
    u, d, dd = evaluate(hi)
    n = 1
    while d < target:
        lo = hi
        hi *= 8.0
        u, d, dd = evaluate(hi)
        n += 1
        if hi > 1e30:
            return QcqpResult(u, hi, abs(d - target), n, unreachable=True)
    tau = hi
    while abs(d - target) > rtol * target and n < max_iter:
        if d > target:
            hi = tau
        else:
            lo = tau
        step = tau - (d - target) / dd if dd > 0 else np.nan
        tau = step if lo < step < hi else (np.sqrt(lo * hi) if lo > 0 else 0.5 * hi)
        u, d, dd = evaluate(tau)
        n += 1
    return QcqpResult(u, tau, abs(d - target), n)
