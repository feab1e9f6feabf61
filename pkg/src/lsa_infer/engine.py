"""LSA recursion with Polyak-Ruppert averaging and exact error decompositions.

Index convention: observations and step sizes are indexed ``k = 1 .. n-1``,
iterates ``k = 0 .. n-1`` and the average is ``n^{-1} sum_{k=0}^{n-1} theta_k``.
Arrays keep position ``k`` for index ``k``; slot 0 of per-step arrays is unused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lsa_infer import _rng
from lsa_infer.errors import DimensionError, DivergenceError, LsaError
from lsa_infer.model import LsaInstance
from lsa_infer.schedule import StepSchedule, stability_constants

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "Trajectory",
    "ErrorDecomposition",
    "lsa_run",
    "lsa_from_observations",
    "draw_z",
    "batch_averages",
    "gamma_product",
    "error_decompose",
    "linear_statistic_identity",
    "average_identity_residual",
    "stability_diagnostic",
    "expansion_moments",
]

DIVERGENCE_THRESHOLD = 1e12
_GUARD_EVERY = 64


def _theta0(instance: LsaInstance, theta0) -> np.ndarray:
    d = instance.dim
    if theta0 is None:
        return np.zeros(d)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.shape != (d,):
        raise DimensionError(f"theta0 must have shape ({d},)")
    return theta0


def draw_z(instance: LsaInstance, n: int, seed: int, *keys: int) -> np.ndarray:
    """Raw draws ``Z_1 .. Z_{n-1}`` of the observation stream ``(seed, *keys)``."""
    return instance.sample_z(_rng.stream(seed, _rng.OBS, *keys), n - 1)


@dataclass(eq=False)
class Trajectory:
    instance: LsaInstance
    schedule: StepSchedule
    n: int
    theta0: np.ndarray
    alphas: np.ndarray  # (n,), slot 0 NaN
    A: np.ndarray  # (n, d, d), slot 0 unused
    b: np.ndarray  # (n, d)
    iterates: np.ndarray  # (n, d), theta_0 .. theta_{n-1}
    average: np.ndarray
    seed: int | None = None

    @property
    def dim(self) -> int:
        return self.theta0.size

    @property
    def noises(self) -> np.ndarray | None:
        """``eps_k`` for ``k = 1 .. n-1`` (row 0 zero); None without ``theta_star``."""
        inst = self.instance
        if inst.theta_star is None:
            return None
        eps = (self.A - inst.Abar) @ inst.theta_star - (self.b - inst.bbar)
        eps[0] = 0.0
        return eps

    def freeze(self) -> "Trajectory":
        for arr in (self.theta0, self.alphas, self.A, self.b, self.iterates, self.average):
            arr.setflags(write=False)
        return self


def _check_divergence(theta: np.ndarray, k: int) -> None:
    if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > DIVERGENCE_THRESHOLD:
        raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_THRESHOLD:g} at step {k}")


def lsa_from_observations(instance, schedule, A, b, theta0=None, seed=None) -> Trajectory:
    """Run the recursion over given observations ``A[k], b[k]``, ``k = 1 .. n-1``."""
    n = A.shape[0]
    theta = _theta0(instance, theta0).copy()
    theta0 = theta.copy()
    alphas = schedule.alphas(n)
    iterates = np.empty((n, theta.size))
    iterates[0] = theta
    for k in range(1, n):
        theta = theta - alphas[k] * (A[k] @ theta - b[k])
        iterates[k] = theta
        if k % _GUARD_EVERY == 0:
            _check_divergence(theta, k)
    _check_divergence(theta, n - 1)
    return Trajectory(instance, schedule, n, theta0, alphas, A, b, iterates,
                      iterates.mean(axis=0), seed).freeze()


def lsa_run(instance: LsaInstance, schedule: StepSchedule, n: int, theta0=None, seed: int = 0,
            keys: tuple = ()) -> Trajectory:
    """Record one LSA trajectory of horizon ``n`` from the stream ``(seed, *keys)``."""
    if n < 2:
        raise LsaError("n must be >= 2")
    z = draw_z(instance, n, seed, *keys)
    A_obs, b_obs = instance.observe(z)
    d = instance.dim
    A = np.concatenate([np.full((1, d, d), np.nan), A_obs])
    b = np.concatenate([np.full((1, d), np.nan), b_obs])
    return lsa_from_observations(instance, schedule, A, b, theta0, seed)


def batch_averages(instance: LsaInstance, schedule: StepSchedule, n: int, theta0, seed: int,
                   keys: tuple = (), reps=None, R: int | None = None, chunk: int = 2000,
                   return_last: bool = False):
    """Streaming run of many independent trajectories; returns ``(R, d)`` averages.

    Replication ``r`` uses the stream ``(seed, OBS, *keys, r)``, the same stream
    :func:`lsa_run` uses with keys ``(*keys, r)``, so results do not depend on
    ``chunk``.
    """
    reps = np.arange(R) if reps is None else np.asarray(reps)
    theta0 = _theta0(instance, theta0)
    alphas = schedule.alphas(n)
    d = instance.dim
    avg = np.empty((reps.size, d))
    last = np.empty((reps.size, d))
    for start in range(0, reps.size, chunk):
        rr = reps[start:start + chunk]
        z = np.stack([draw_z(instance, n, seed, *keys, int(r)) for r in rr])
        theta = np.tile(theta0, (rr.size, 1))
        acc = theta.copy()
        for k in range(1, n):
            A, b = instance.observe(z[:, k - 1])
            theta = theta - alphas[k] * (np.einsum("rij,rj->ri", A, theta) - b)
            acc += theta
            if k % _GUARD_EVERY == 0:
                _check_divergence(theta, k)
        _check_divergence(theta, n - 1)
        avg[start:start + rr.size] = acc / n
        last[start:start + rr.size] = theta
    return (avg, last) if return_last else avg


def gamma_product(traj: Trajectory, m: int, k: int) -> np.ndarray:
    """``Gamma_{m:k} = (I - alpha_k A_k) ... (I - alpha_m A_m)``; identity for ``m > k``."""
    if m < 1 or k > traj.n - 1:
        raise LsaError(f"indices must satisfy 1 <= m and k <= {traj.n - 1}")
    d = traj.dim
    G = np.eye(d)
    for ell in range(m, k + 1):
        G = (np.eye(d) - traj.alphas[ell] * traj.A[ell]) @ G
    return G


@dataclass(eq=False)
class ErrorDecomposition:
    """Per-step terms, each an ``(n, d)`` array indexed by ``k``.

    ``J[l]`` and ``H[l]`` for ``l = 0..L``; ``H_last = H[L]``.
    """

    transient: np.ndarray
    J: np.ndarray
    H: np.ndarray
    L: int
    error: np.ndarray  # theta_k - theta_star

    @property
    def H_last(self) -> np.ndarray:
        return self.H[self.L]

    def reconstruction(self, depth: int | None = None) -> np.ndarray:
        depth = self.L if depth is None else depth
        return self.transient + self.J[: depth + 1].sum(axis=0) + self.H[depth]

    def reconstruction_residual(self, depth: int | None = None) -> float:
        """Max relative error of ``transient + sum J + H`` against ``theta_k - theta_star``."""
        diff = np.linalg.norm(self.reconstruction(depth) - self.error, axis=1)
        scale = 1.0 + np.linalg.norm(self.error, axis=1)
        return float(np.max(diff / scale))


def error_decompose(traj: Trajectory, L: int = 2) -> ErrorDecomposition:
    inst = traj.instance
    if inst.theta_star is None:
        raise LsaError("error decomposition needs a known theta_star")
    if L not in (0, 1, 2):
        raise LsaError("L must be 0, 1 or 2")
    n, d = traj.n, traj.dim
    Abar = inst.Abar
    eye = np.eye(d)
    eps = traj.noises
    err = traj.iterates - inst.theta_star
    transient = np.zeros((n, d))
    J = np.zeros((L + 1, n, d))
    H = np.zeros((L + 1, n, d))
    transient[0] = err[0]
    for k in range(1, n):
        a = traj.alphas[k]
        Ak = traj.A[k]
        At = Ak - Abar
        Gk = eye - a * Abar
        Bk = eye - a * Ak
        transient[k] = Bk @ transient[k - 1]
        J[0, k] = Gk @ J[0, k - 1] - a * eps[k]
        for ell in range(1, L + 1):
            J[ell, k] = Gk @ J[ell, k - 1] - a * At @ J[ell - 1, k - 1]
        for ell in range(L + 1):
            H[ell, k] = Bk @ H[ell, k - 1] - a * At @ J[ell, k - 1]
    return ErrorDecomposition(transient, J, H, L, err)


def linear_statistic_identity(decomp: ErrorDecomposition, q_matrices, noises) -> float:
    """Relative residual of ``sum_k J_k^(0) = -sum_l Q_l eps_l``."""
    q_matrices = np.asarray(q_matrices)
    noises = np.asarray(noises)
    if q_matrices.shape[0] != decomp.J.shape[1] or noises.shape[0] != decomp.J.shape[1]:
        raise DimensionError("Q weights, noises and decomposition must share the horizon")
    lhs = decomp.J[0, 1:].sum(axis=0)
    rhs = np.einsum("kij,kj->i", q_matrices[1:], noises[1:])
    return float(np.linalg.norm(lhs + rhs) / (1.0 + np.linalg.norm(lhs)))


def average_identity_residual(traj: Trajectory, decomp: ErrorDecomposition) -> float:
    """Relative residual of the averaged-error representation.

    ``theta_bar - theta_star = n^{-1} [sum_{k=0}^{n-1} Gamma_{1:k}(theta_0 - theta_star)
    + sum_{k=1}^{n-1} J_k^(0) + sum_{k=1}^{n-1} H_k^(0)]``.
    """
    n = traj.n
    lhs = traj.average - traj.instance.theta_star
    rhs = (decomp.transient.sum(axis=0) + decomp.J[0, 1:].sum(axis=0) + decomp.H[0, 1:].sum(axis=0)) / n
    return float(np.linalg.norm(lhs - rhs) / (1.0 + np.linalg.norm(lhs)))


def stability_diagnostic(instance: LsaInstance, schedule: StepSchedule, m: int, k: int, p: float,
                         R: int, seed: int, P=None) -> dict:
    """Monte-Carlo ``E^{1/p} ||Gamma_{m:k}||^p`` against ``sqrt(kappa_Q) e prod(1 - a alpha_l / 2)``."""
    if R < 100:
        raise LsaError("R must be >= 100")
    consts = stability_constants(instance.Abar, P, instance.bA)
    d = instance.dim
    n = k + 1
    alphas = schedule.alphas(n)
    z = np.stack([draw_z(instance, n, seed, r) for r in range(R)])
    G = np.tile(np.eye(d), (R, 1, 1))
    for ell in range(m, k + 1):
        A, _ = instance.observe(z[:, ell - 1])
        G = G - alphas[ell] * A @ G
    norms = np.linalg.norm(G, ord=2, axis=(1, 2))
    mom = np.mean(norms**p)
    empirical = mom ** (1.0 / p)
    # delta-method standard error of E^{1/p}
    se = np.std(norms**p, ddof=1) / math.sqrt(R) * empirical / (p * mom) if mom > 0 else 0.0
    bound = math.sqrt(consts.kappa_Q) * math.e * float(np.prod(1 - consts.a * alphas[m:k + 1] / 2))
    return {"empirical": float(empirical), "stderr": float(se), "bound": bound,
            "ratio": float(empirical / bound), "m": m, "k": k, "p": p, "R": R}


def expansion_moments(instance: LsaInstance, schedule: StepSchedule, n: int, R: int, seed: int,
                      L: int = 2, chunk: int = 2000) -> np.ndarray:
    """Empirical ``E ||J_k^(l)||^2`` over ``R`` streams; array ``(L+1, n)``."""
    d = instance.dim
    Abar = instance.Abar
    alphas = schedule.alphas(n)
    out = np.zeros((L + 1, n))
    for start in range(0, R, chunk):
        rr = range(start, min(R, start + chunk))
        z = np.stack([draw_z(instance, n, seed, r) for r in rr])
        J = np.zeros((L + 1, len(rr), d))
        for k in range(1, n):
            A, b = instance.observe(z[:, k - 1])
            At = A - Abar
            eps = At @ instance.theta_star - (b - instance.bbar)
            a = alphas[k]
            new = np.empty_like(J)
            new[0] = J[0] - a * J[0] @ Abar.T - a * eps
            for ell in range(1, L + 1):
                new[ell] = J[ell] - a * J[ell] @ Abar.T - a * np.einsum("rij,rj->ri", At, J[ell - 1])
            J = new
            out[:, k] += np.sum(J**2, axis=2).sum(axis=1)
    return out / R
