"""Deterministic covariance algebra for averaged LSA.

``G_{m:k}`` is the product of ``I - alpha_l Abar`` for ``l = m..k`` (identity
when ``m > k``), ``Q_l = alpha_l * sum_{j=l}^{n-1} G_{l+1:j}`` are the weights of
the linear statistic, ``Sigma_n`` its covariance and ``Sigma_inf`` the CLT
covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lsa_infer.errors import DimensionError, LsaError
from lsa_infer.model import solve_target
from lsa_infer.schedule import StepSchedule

__all__ = [
    "CovarianceReport",
    "det_product_G",
    "q_matrices",
    "q_matrix",
    "sigma_n",
    "sigma_inf",
    "sigma_n_boot",
    "spectral_norm",
    "covariance_report",
    "covariance_gap_series",
]


def spectral_norm(M) -> float:
    return float(np.linalg.norm(np.atleast_2d(M), 2))


def det_product_G(Abar, schedule: StepSchedule, m: int, k: int) -> np.ndarray:
    """Ordered product, later factors on the left."""
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    if m < 1:
        raise LsaError("m must be >= 1")
    d = Abar.shape[0]
    G = np.eye(d)
    for ell in range(m, k + 1):
        G = (np.eye(d) - schedule.alpha(ell) * Abar) @ G
    return G


def q_matrices(Abar, schedule: StepSchedule, n: int) -> np.ndarray:
    """All ``Q_l`` for horizon ``n`` as an ``(n, d, d)`` array (index 0 unused, zero).

    Suffix recursion ``S_l = I + S_{l+1} (I - alpha_{l+1} Abar)``, ``S_{n-1} = I``,
    ``Q_l = alpha_l S_l``; O(n d^3).
    """
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    d = Abar.shape[0]
    if n < 2:
        raise LsaError("n must be >= 2")
    alphas = schedule.alphas(n)
    eye = np.eye(d)
    out = np.zeros((n, d, d))
    S = eye.copy()
    out[n - 1] = alphas[n - 1] * S
    for ell in range(n - 2, 0, -1):
        S = eye + S @ (eye - alphas[ell + 1] * Abar)
        out[ell] = alphas[ell] * S
    return out


def q_matrix(Abar, schedule: StepSchedule, ell: int, n: int) -> np.ndarray:
    if not 1 <= ell <= n - 1:
        raise LsaError(f"ell must lie in [1, {n - 1}]")
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    d = Abar.shape[0]
    eye = np.eye(d)
    S = eye.copy()
    for j in range(n - 2, ell - 1, -1):
        S = eye + S @ (eye - schedule.alpha(j + 1) * Abar)
    return schedule.alpha(ell) * S


def sigma_n(Abar, Sigma_eps, schedule: StepSchedule, n: int) -> np.ndarray:
    """``n^{-1} sum_{k=1}^{n-1} Q_k Sigma_eps Q_k^T``."""
    Sigma_eps = np.atleast_2d(np.asarray(Sigma_eps, dtype=float))
    Q = q_matrices(Abar, schedule, n)[1:]
    S = np.einsum("kij,jl,kml->im", Q, Sigma_eps, Q) / n
    return 0.5 * (S + S.T)


def sigma_inf(Abar, Sigma_eps) -> np.ndarray:
    """``Abar^{-1} Sigma_eps Abar^{-T}``, symmetrised."""
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    Sigma_eps = np.atleast_2d(np.asarray(Sigma_eps, dtype=float))
    X = np.column_stack([solve_target(Abar, col) for col in Sigma_eps.T])  # Abar^{-1} Sigma_eps
    S = np.column_stack([solve_target(Abar, row) for row in X])  # Abar^{-1} (Abar^{-1} Sigma_eps)^T
    return 0.5 * (S + S.T)


def sigma_n_boot(noises, q) -> np.ndarray:
    """Bootstrap-world covariance of the linear part, ``n^{-1} sum Q_l eps_l eps_l^T Q_l^T``.

    ``noises`` is ``(n, d)`` with row ``l`` holding ``eps_l`` (row 0 ignored) and
    ``q`` is the ``(n, d, d)`` output of :func:`q_matrices`.
    """
    if noises is None:
        raise LsaError("noises are required (theta_star must be known)")
    noises = np.asarray(noises, dtype=float)
    if noises.shape[0] != q.shape[0]:
        raise DimensionError("noises and Q weights have different horizons")
    n = q.shape[0]
    v = np.einsum("kij,kj->ki", q[1:], noises[1:])
    return v.T @ v / n


@dataclass
class CovarianceReport:
    n: int
    schedule: StepSchedule
    Sigma_n: np.ndarray
    Sigma_inf: np.ndarray
    gap: float
    lambda_min_n: float
    lambda_min_inf: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "schedule": self.schedule.to_dict(),
            "Sigma_n": self.Sigma_n.tolist(),
            "Sigma_inf": self.Sigma_inf.tolist(),
            "gap": self.gap,
            "lambda_min_n": self.lambda_min_n,
            "lambda_min_inf": self.lambda_min_inf,
        }


def covariance_report(Abar, Sigma_eps, schedule: StepSchedule, n: int) -> CovarianceReport:
    Sn = sigma_n(Abar, Sigma_eps, schedule, n)
    Si = sigma_inf(Abar, Sigma_eps)
    return CovarianceReport(
        n=n,
        schedule=schedule,
        Sigma_n=Sn,
        Sigma_inf=Si,
        gap=spectral_norm(Sn - Si),
        lambda_min_n=float(np.linalg.eigvalsh(Sn)[0]),
        lambda_min_inf=float(np.linalg.eigvalsh(Si)[0]),
    )


def covariance_gap_series(Abar, Sigma_eps, schedule: StepSchedule, n_grid):
    """``(n, ||Sigma_n - Sigma_inf||)`` over ``n_grid`` as a DistanceSeries."""
    from lsa_infer.gaussapprox import DistanceSeries

    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise LsaError("n_grid must be strictly increasing")
    if n_grid and n_grid[0] < schedule.k0 + 1:
        raise LsaError("grid points must be >= k0 + 1")
    Si = sigma_inf(Abar, Sigma_eps)
    gaps = [spectral_norm(sigma_n(Abar, Sigma_eps, schedule, n) - Si) for n in n_grid]
    return DistanceSeries(n=np.array(n_grid), distance=np.array(gaps), stderr=np.zeros(len(gaps)),
                          metric="sigma_gap", reference="sigma_inf", bounded=False)
