"""Distances to Gaussian reference laws and log-log rate fitting.

The convex distance over all convex sets is not computable, so two
computable classes stand in for it: half-spaces along a finite set of
directions (coordinate axes plus seeded random unit vectors) and centred
Euclidean balls.  Both are subclasses of the convex sets, so both estimates
are lower bounds of the convex distance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from lsa_infer import _rng
from lsa_infer.covariance import sigma_inf, sigma_n
from lsa_infer.engine import batch_averages, draw_z
from lsa_infer.errors import DimensionError, LsaError
from lsa_infer.model import LsaInstance
from lsa_infer.schedule import StepSchedule

log = logging.getLogger(__name__)

__all__ = [
    "DistanceSeries",
    "RateFit",
    "kolmogorov_normal_vs_normal_1d",
    "lower_bound_sigma_n_1d",
    "lower_bound_series",
    "probe_directions",
    "halfspace_distance",
    "halfspace_distance_two_sample",
    "ball_distance",
    "dkw_band",
    "clt_rate_experiment",
    "bootstrap_validity_experiment",
    "rate_fit",
]


@dataclass
class DistanceSeries:
    n: np.ndarray
    distance: np.ndarray
    stderr: np.ndarray
    metric: str = "halfspace_sup"
    reference: str = "sigma_inf"
    bounded: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=int)
        self.distance = np.asarray(self.distance, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if np.any(np.diff(self.n) <= 0):
            raise LsaError("n must be strictly increasing")
        if self.bounded and np.any((self.distance < 0) | (self.distance > 1)):
            raise LsaError("distances must lie in [0, 1]")

    def to_rows(self) -> list[tuple]:
        return [(int(n), float(d), float(s)) for n, d, s in zip(self.n, self.distance, self.stderr)]

    def to_dict(self) -> dict:
        out = {"metric": self.metric, "reference": self.reference,
               "points": [{"n": n, "distance": d, "stderr": s} for n, d, s in self.to_rows()]}
        if self.extra:
            out["extra"] = self.extra
        return out


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared, "slope_stderr": self.slope_stderr}


def rate_fit(series) -> RateFit:
    """OLS of ``log distance`` on ``log n``."""
    if isinstance(series, DistanceSeries):
        n, dist = series.n, series.distance
    else:
        n, dist = (np.asarray(v, dtype=float) for v in series)
    n = np.asarray(n, dtype=float)
    dist = np.asarray(dist, dtype=float)
    if np.any(dist <= 0):
        raise LsaError("rate fit needs positive distances")
    if np.unique(n).size < 3:
        raise LsaError("rate fit needs at least 3 distinct horizons")
    x, y = np.log(n), np.log(dist)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / sst if sst > 0 else 1.0
    dof = x.size - 2
    s2 = np.sum(resid**2) / dof if dof > 0 else 0.0
    se = math.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    return RateFit(slope=float(coef[1]), intercept=float(coef[0]),
                   r_squared=float(min(max(r2, 0.0), 1.0)), slope_stderr=float(se))


def kolmogorov_normal_vs_normal_1d(sigma: float) -> float:
    """``sup_x |Phi(x / sigma) - Phi(x)|``, evaluated at the density crossing point."""
    if not sigma > 0:
        raise LsaError("sigma must be positive")
    if sigma == 1.0:
        return 0.0
    x = math.sqrt(2 * sigma**2 * math.log(sigma) / (sigma**2 - 1))
    return float(abs(ndtr(x / sigma) - ndtr(x)))


def lower_bound_sigma_n_1d(schedule: StepSchedule, n: int) -> float:
    """Standard deviation of ``sqrt(n) theta_bar_n`` for the 1D Gaussian instance."""
    return math.sqrt(sigma_n(np.eye(1), np.eye(1), schedule, n)[0, 0])


def lower_bound_series(schedule: StepSchedule, n_grid) -> DistanceSeries:
    """Exact Kolmogorov distances between ``N(0, Sigma_n)`` and ``N(0, 1)``."""
    dist = [kolmogorov_normal_vs_normal_1d(lower_bound_sigma_n_1d(schedule, n)) for n in n_grid]
    return DistanceSeries(n_grid, dist, np.zeros(len(dist)), metric="kolmogorov_1d_exact",
                          reference="standard_normal")


def probe_directions(d: int, K: int, seed: int) -> np.ndarray:
    """The ``d`` coordinate axes followed by ``K - d`` seeded random unit vectors."""
    K = max(K, d)
    eye = np.eye(d)
    if K == d:
        return eye
    g = _rng.stream(seed, _rng.DIRECTIONS).standard_normal((K - d, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([eye, g])


def _check_directions(directions, d):
    U = np.atleast_2d(np.asarray(directions, dtype=float))
    if U.shape[1] != d:
        raise DimensionError("directions must have the sample dimension")
    norms = np.linalg.norm(U, axis=1)
    if np.any(norms == 0):
        raise LsaError("zero direction")
    if np.any(np.abs(norms - 1) > 1e-10):
        raise LsaError("directions must be unit vectors")
    return U


def _ks_one_sample(x_sorted: np.ndarray, cdf: np.ndarray) -> float:
    R = x_sorted.size
    i = np.arange(1, R + 1)
    return float(max(np.max(i / R - cdf), np.max(cdf - (i - 1) / R)))


def halfspace_distance(samples, reference_cov, directions) -> dict:
    """Largest one-sample KS distance of projected samples to ``N(0, u^T S u)``."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] == 1 and X.shape[1] > 1 and np.ndim(samples) == 1:
        X = X.T
    S = np.atleast_2d(np.asarray(reference_cov, dtype=float))
    d = X.shape[1]
    if S.shape != (d, d):
        raise DimensionError("reference covariance has the wrong shape")
    if np.max(np.abs(S - S.T)) > 1e-10 * np.max(np.abs(S)) or np.linalg.eigvalsh(S)[0] <= 0:
        raise LsaError("reference covariance must be symmetric positive definite")
    U = _check_directions(directions, d)
    per = np.empty(U.shape[0])
    for j, u in enumerate(U):
        proj = np.sort(X @ u)
        s = math.sqrt(u @ S @ u)
        per[j] = _ks_one_sample(proj, ndtr(proj / s))
    return {"distance": float(per.max()), "per_direction": per, "stderr": 1.0 / math.sqrt(X.shape[0])}


def _ks_two_sample(x: np.ndarray, y: np.ndarray) -> float:
    x = np.sort(x)
    y = np.sort(y)
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / x.size
    fy = np.searchsorted(y, pts, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def halfspace_distance_two_sample(x, y, directions) -> dict:
    """Largest two-sample KS distance between projections of two empirical laws."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError("samples have different dimensions")
    U = _check_directions(directions, X.shape[1])
    per = np.array([_ks_two_sample(X @ u, Y @ u) for u in U])
    se = math.sqrt(1.0 / X.shape[0] + 1.0 / Y.shape[0])
    return {"distance": float(per.max()), "per_direction": per, "stderr": se}


def dkw_band(R: int, confidence: float = 0.95) -> float:
    """Half-width ``sqrt(log(2 / (1 - confidence)) / (2 R))`` of the DKW band."""
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * R))


@lru_cache(maxsize=32)
def _reference_ball_norms(cov_bytes: bytes, d: int, R_ref: int, seed: int) -> np.ndarray:
    S = np.frombuffer(cov_bytes, dtype=float).reshape(d, d)
    L = np.linalg.cholesky(S)
    g = _rng.stream(seed, _rng.REFERENCE).standard_normal((R_ref, d))
    norms = np.sort(np.linalg.norm(g @ L.T, axis=1))
    norms.setflags(write=False)
    return norms


def ball_distance(samples, reference_cov, radii_grid, R_ref: int = 1_000_000, seed: int = 0) -> float:
    """``sup_r |P_hat(||X|| <= r) - P(||G|| <= r)|`` over ``radii_grid``, ``G ~ N(0, S)``.

    Gaussian ball probabilities come from ``R_ref`` seeded reference draws,
    cached per covariance.
    """
    radii = np.asarray(radii_grid, dtype=float)
    if radii.size == 0:
        raise LsaError("radii grid is empty")
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    S = np.ascontiguousarray(np.atleast_2d(np.asarray(reference_cov, dtype=float)))
    d = X.shape[1]
    ref = _reference_ball_norms(S.tobytes(), d, int(R_ref), int(seed))
    emp = np.sort(np.linalg.norm(X, axis=1))
    f_emp = np.searchsorted(emp, radii, side="right") / emp.size
    f_ref = np.searchsorted(ref, radii, side="right") / ref.size
    return float(np.max(np.abs(f_emp - f_ref)))


def _reference_cov(instance: LsaInstance, schedule: StepSchedule, n: int, reference: str) -> np.ndarray:
    if reference == "sigma_n":
        return sigma_n(instance.Abar, instance.Sigma_eps, schedule, n)
    if reference == "sigma_inf":
        return sigma_inf(instance.Abar, instance.Sigma_eps)
    if reference == "standard_normal":
        return np.eye(instance.dim)
    raise LsaError(f"unknown reference {reference!r}")


def clt_rate_experiment(instance: LsaInstance, schedule: StepSchedule, n_grid, R: int, K: int = 32,
                        seed: int = 0, reference: str = "sigma_inf", theta0=None,
                        workers: int = 1) -> DistanceSeries:
    """Half-space distance of ``sqrt(n)(theta_bar_n - theta*)`` to ``N(0, reference)`` per ``n``.

    Grid point ``g`` replication ``r`` draws from the stream ``(seed, OBS, g, r)``.
    """
    from lsa_infer.parallel import map_ordered

    if R < 1000:
        raise LsaError("R must be >= 1000 per grid point")
    n_grid = [int(n) for n in n_grid]
    U = probe_directions(instance.dim, K, seed)
    dist, se, per = [], [], []
    for g, n in enumerate(n_grid):
        parts = map_ordered(
            _averages_task,
            [(instance, schedule, n, theta0, seed, (g,), chunk) for chunk in _chunks(R, workers)],
            workers,
        )
        avg = np.concatenate(parts)
        T = math.sqrt(n) * (avg - instance.theta_star)
        res = halfspace_distance(T, _reference_cov(instance, schedule, n, reference), U)
        dist.append(res["distance"])
        se.append(res["stderr"])
        per.append(res["per_direction"].tolist())
    floor = dkw_band(R)
    if min(dist) < 3 * floor:
        log.warning("DKW noise floor %.4f is within a factor 3 of the smallest distance %.4f",
                    floor, min(dist))
    return DistanceSeries(n_grid, dist, se, metric="halfspace_sup", reference=reference,
                          extra={"R": R, "K": int(U.shape[0]), "dkw95": floor})


def _chunks(R: int, workers: int, size: int = 2000) -> list[np.ndarray]:
    size = min(size, max(1, math.ceil(R / max(workers, 1))))
    return [np.arange(s, min(R, s + size)) for s in range(0, R, size)]


def _averages_task(args):
    instance, schedule, n, theta0, seed, keys, reps = args
    return batch_averages(instance, schedule, n, theta0, seed, keys=keys, reps=reps)


def bootstrap_validity_experiment(instance: LsaInstance, schedule: StepSchedule, n_grid, M: int,
                                  R_outer: int, R_real: int, seed: int = 0, K: int = 32,
                                  scheme="two_point", theta0=None, workers: int = 1) -> DistanceSeries:
    """Distance between the bootstrap-world law and the real-world law per ``n``.

    For each ``n`` the real law of ``sqrt(n)(theta_bar_n - theta*)`` is sampled
    from ``R_real`` trajectories (streams ``(seed, OBS, REAL, g, r)``); each of
    ``R_outer`` data trajectories (streams ``(seed, OBS, g, t)``) yields ``M``
    bootstrap draws of ``sqrt(n)(theta_bar_n^b - theta_bar_n)``.  The series holds
    the median over data trajectories; the 90th percentile goes in ``extra``.
    """
    from lsa_infer.bootstrap import WeightScheme, bootstrap_averages
    from lsa_infer.parallel import map_ordered

    if M < 1000 or R_real < 1000:
        raise LsaError("M and R_real must both be >= 1000")
    scheme = WeightScheme.of(scheme)
    n_grid = [int(n) for n in n_grid]
    U = probe_directions(instance.dim, K, seed)
    med, q90, se, all_d = [], [], [], []
    for g, n in enumerate(n_grid):
        parts = map_ordered(
            _averages_task,
            [(instance, schedule, n, theta0, seed, (_rng.REAL, g), chunk) for chunk in _chunks(R_real, workers)],
            workers,
        )
        real = math.sqrt(n) * (np.concatenate(parts) - instance.theta_star)
        tasks = [(instance, schedule, n, theta0, seed, g, t, M, scheme, U, real) for t in range(R_outer)]
        dists = np.array(map_ordered(_validity_task, tasks, workers))
        med.append(float(np.median(dists)))
        q90.append(float(np.quantile(dists, 0.9)))
        se.append(math.sqrt(1.0 / M + 1.0 / R_real))
        all_d.append(dists.tolist())
    return DistanceSeries(n_grid, med, se, metric="halfspace_sup", reference="bootstrap_vs_real",
                          extra={"q90": q90, "per_trajectory": all_d, "M": M, "R_outer": R_outer,
                                 "R_real": R_real, "scheme": scheme.kind})


def _validity_task(args):
    from lsa_infer.bootstrap import bootstrap_averages

    instance, schedule, n, theta0, seed, g, t, M, scheme, U, real = args
    z = draw_z(instance, n, seed, g, t)
    base, boot = bootstrap_averages(instance, schedule, z, theta0, M, scheme, seed, keys=(g, t))
    T_b = math.sqrt(n) * (boot - base)
    return halfspace_distance_two_sample(T_b, real, U)["distance"]
