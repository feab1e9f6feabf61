"""Online multiplier bootstrap for averaged LSA.

``M`` perturbed recursions share the observations of one base trajectory;
replicate ``l`` rescales every step by an i.i.d. weight ``w_k^l`` with mean 1
and variance 1 and starts from the same ``theta_0``.  All replicates advance
together in a single pass over the observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

from lsa_infer import _rng
from lsa_infer.engine import Trajectory, _check_divergence, draw_z
from lsa_infer.errors import LsaError
from lsa_infer.model import LsaInstance
from lsa_infer.schedule import StepSchedule

__all__ = [
    "WeightScheme",
    "BootstrapEnsemble",
    "ConfidenceReport",
    "sample_weight",
    "bootstrap_averages",
    "bootstrap_run",
    "order_statistic",
    "confidence_sets",
    "coverage_experiment",
]

_KINDS = ("two_point", "exponential", "poisson_shifted", "constant")
_ALIASES = {"exp": "exponential", "poisson": "poisson_shifted", "two-point": "two_point"}


def _poisson_m3() -> float:
    k = np.arange(0, 200)
    return float(np.sum(poisson.pmf(k, 1.0) * np.abs(k - 1.0) ** 3))


@dataclass(frozen=True)
class WeightScheme:
    """Multiplier law with mean 1 and variance 1.

    ``constant`` (``w = 1``) has variance 0 and is only meant for checks that
    collapse the bootstrap onto the base recursion.
    """

    kind: str = "two_point"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise LsaError(f"unknown weight scheme {self.kind!r}; choose from {_KINDS[:3]}")

    @classmethod
    def of(cls, value) -> "WeightScheme":
        if isinstance(value, WeightScheme):
            return value
        return cls(_ALIASES.get(value, value))

    mean = 1.0

    @property
    def variance(self) -> float:
        return 0.0 if self.kind == "constant" else 1.0

    @property
    def m3(self) -> float:
        """``E|w - 1|^3``."""
        return {
            "two_point": 1.0,
            "exponential": 12.0 / math.e - 2.0,
            "poisson_shifted": _poisson_m3(),
            "constant": 0.0,
        }[self.kind]

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "two_point":
            return 2.0 * rng.integers(0, 2, size=size)
        if self.kind == "exponential":
            return rng.standard_exponential(size)
        if self.kind == "poisson_shifted":
            return rng.poisson(1.0, size).astype(float)
        return np.ones(size)


def sample_weight(scheme, rng: np.random.Generator) -> float:
    return float(WeightScheme.of(scheme).draw(rng, 1)[0])


def bootstrap_averages(instance: LsaInstance, schedule: StepSchedule, z, theta0, M: int, scheme,
                       seed: int, keys: tuple = (), block: int = 1024, A=None, b=None):
    """Base average and ``(M, d)`` bootstrap averages over one observation stream.

    Either raw draws ``z`` (length ``n - 1``) or observation arrays ``A, b``
    with slot 0 unused are accepted.  Replicate ``l`` takes its weights from
    the stream ``(seed, WEIGHTS, *keys, l)``, generated in blocks of ``block``
    steps so memory stays ``O(M * block)``.
    """
    scheme = WeightScheme.of(scheme)
    if A is None:
        A_obs, b_obs = instance.observe(np.asarray(z))
    else:
        A_obs, b_obs = A[1:], b[1:]
    n = A_obs.shape[0] + 1
    d = instance.dim
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float)
    alphas = schedule.alphas(n)
    gens = [_rng.stream(seed, _rng.WEIGHTS, *keys, ell) for ell in range(M)]
    theta = theta0.copy()
    base_acc = theta0.copy()
    tb = np.tile(theta0, (M, 1))
    boot_acc = tb.copy()
    for start in range(1, n, block):
        stop = min(n, start + block)
        W = np.stack([scheme.draw(g, stop - start) for g in gens])  # (M, steps)
        for k in range(start, stop):
            Ak, bk = A_obs[k - 1], b_obs[k - 1]
            a = alphas[k]
            theta = theta - a * (Ak @ theta - bk)
            base_acc += theta
            tb = tb - (a * W[:, k - start])[:, None] * (tb @ Ak.T - bk)
            boot_acc += tb
        _check_divergence(tb, stop - 1)
        _check_divergence(theta, stop - 1)
    return base_acc / n, boot_acc / n


@dataclass(eq=False)
class BootstrapEnsemble:
    M: int
    averages: np.ndarray  # (M, d)
    base_average: np.ndarray
    n: int
    scheme: WeightScheme
    seed: int

    def to_rows(self) -> list[list]:
        return [[ell, *row] for ell, row in enumerate(self.averages.tolist())]


def bootstrap_run(trajectory: Trajectory, M: int, scheme="two_point", seed: int = 0) -> BootstrapEnsemble:
    """Run ``M`` perturbed recursions over the stored observations of ``trajectory``."""
    if M < 1:
        raise LsaError("M must be >= 1")
    scheme = WeightScheme.of(scheme)
    base, boot = bootstrap_averages(trajectory.instance, trajectory.schedule, None, trajectory.theta0, M,
                                    scheme, seed, A=trajectory.A, b=trajectory.b)
    # the bootstrap pass recomputes the base recursion; it must agree with the stored one
    if not np.allclose(base, trajectory.average, rtol=1e-10, atol=1e-12):
        raise LsaError("bootstrap pass disagrees with the stored trajectory")
    return BootstrapEnsemble(M, boot, trajectory.average.copy(), trajectory.n, scheme, seed)


def order_statistic(x, level: float) -> float:
    """Order statistic of index ``ceil(level * M)`` (1-based, clamped to ``[1, M]``)."""
    xs = np.sort(np.asarray(x, dtype=float))
    idx = min(max(math.ceil(level * xs.size - 1e-12), 1), xs.size)
    return float(xs[idx - 1])


@dataclass
class ConfidenceReport:
    level: float
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sup_radius: float
    ellipsoid_radius: float
    shape_matrix: np.ndarray
    covered_coords: np.ndarray | None = None
    covered_sup: bool | None = None
    covered_ellipsoid: bool | None = None
    degenerate: bool = False

    @property
    def contains_target(self) -> bool | None:
        """True iff every coordinate interval contains the target."""
        return None if self.covered_coords is None else bool(np.all(self.covered_coords))

    def to_dict(self) -> dict:
        out = {
            "level": self.level,
            "center": self.center.tolist(),
            "intervals": [[float(lo), float(hi)] for lo, hi in zip(self.lower, self.upper)],
            "sup_radius": self.sup_radius,
            "ellipsoid_radius": self.ellipsoid_radius,
            "shape_matrix": self.shape_matrix.tolist(),
            "degenerate": self.degenerate,
        }
        if self.covered_coords is not None:
            out.update(contains_target=self.contains_target, covered_coords=self.covered_coords.tolist(),
                       covered_sup=self.covered_sup, covered_ellipsoid=self.covered_ellipsoid)
        return out


def confidence_sets(ensemble: BootstrapEnsemble, level: float = 0.9, theta_star=None,
                    allow_degenerate: bool = False) -> ConfidenceReport:
    """Bootstrap confidence sets centred at the base average.

    With deviations ``delta^l = theta_bar^{b,l} - theta_bar``: coordinate ``i``
    gets ``[theta_bar_i - q_hi, theta_bar_i - q_lo]`` where ``q_lo, q_hi`` are
    the ``(1 -+ level)/2`` order statistics of ``delta_i``; the sup-norm radius
    is the ``level`` order statistic of ``max_i |delta_i|``; the ellipsoid uses
    the Mahalanobis norm under the ridged sample covariance of ``delta``.
    """
    if not 0 < level < 1:
        raise LsaError("level must lie in (0, 1)")
    delta = ensemble.averages - ensemble.base_average
    M, d = delta.shape
    center = ensemble.base_average.copy()
    C = np.atleast_2d(np.cov(delta, rowvar=False)) if M > 1 else np.zeros((d, d))
    degenerate = bool(np.linalg.eigvalsh(C)[0] < 1e-14)
    if degenerate and not allow_degenerate and np.any(np.abs(delta) > 0):
        raise LsaError("degenerate bootstrap ensemble: sample covariance is singular")
    q_lo = np.array([order_statistic(delta[:, i], (1 - level) / 2) for i in range(d)])
    q_hi = np.array([order_statistic(delta[:, i], (1 + level) / 2) for i in range(d)])
    lower, upper = center - q_hi, center - q_lo
    sup_r = order_statistic(np.max(np.abs(delta), axis=1), level)
    shape = C + 1e-10 * np.eye(d)
    Cinv = np.linalg.inv(shape)
    maha = np.sqrt(np.einsum("mi,ij,mj->m", delta, Cinv, delta))
    ell_r = order_statistic(maha, level)
    rep = ConfidenceReport(level, center, lower, upper, sup_r, ell_r, shape, degenerate=degenerate)
    if theta_star is not None:
        ts = np.asarray(theta_star, dtype=float)
        err = ts - center
        rep.covered_coords = (lower <= ts) & (ts <= upper)
        rep.covered_sup = bool(np.max(np.abs(err)) <= sup_r)
        rep.covered_ellipsoid = bool(math.sqrt(err @ Cinv @ err) <= ell_r)
    return rep


def _coverage_task(args):
    instance, schedule, n, M, level, seed, r, theta0, scheme = args
    z = draw_z(instance, n, seed, r)
    base, boot = bootstrap_averages(instance, schedule, z, theta0, M, scheme, seed, keys=(r,))
    ens = BootstrapEnsemble(M, boot, base, n, scheme, seed)
    levels = level if isinstance(level, (list, tuple)) else [level]
    out = []
    for lv in levels:
        rep = confidence_sets(ens, lv, instance.theta_star, allow_degenerate=True)
        out.append((rep.covered_coords, rep.contains_target, rep.covered_sup, rep.covered_ellipsoid,
                    rep.degenerate))
    return out


def coverage_experiment(instance: LsaInstance, schedule: StepSchedule, n: int, M: int, R: int,
                        level=0.9, seed: int = 0, theta0=None, scheme="two_point",
                        workers: int = 1) -> dict:
    """Empirical coverage of the bootstrap sets over ``R`` fresh trajectories.

    Outer replication ``r`` observes the stream ``(seed, OBS, r)`` and its
    replicates use ``(seed, WEIGHTS, r, l)``.  ``level`` may be a list, in which
    case all levels are evaluated on the same ensembles.
    """
    from lsa_infer.parallel import map_ordered

    if R < 100:
        raise LsaError("R must be >= 100")
    scheme = WeightScheme.of(scheme)
    levels = list(level) if isinstance(level, (list, tuple)) else [level]
    tasks = [(instance, schedule, n, M, levels, seed, r, theta0, scheme) for r in range(R)]
    results, diverged = [], 0
    for res in map_ordered(_safe(_coverage_task), tasks, workers):
        if res is None:
            diverged += 1
        else:
            results.append(res)
    Rv = len(results)
    out = {"n": n, "M": M, "R": R, "diverged": diverged, "levels": {}}
    for j, lv in enumerate(levels):
        coords = np.array([r[j][0] for r in results], dtype=float)
        stats = {
            "coordinate": coords.mean(axis=0).tolist(),
            "box": float(np.mean([r[j][1] for r in results])),
            "sup": float(np.mean([r[j][2] for r in results])),
            "ellipsoid": float(np.mean([r[j][3] for r in results])),
            "degenerate": int(sum(r[j][4] for r in results)),
        }
        stats["stderr"] = {
            "coordinate": [math.sqrt(p * (1 - p) / Rv) for p in stats["coordinate"]],
            **{k: math.sqrt(stats[k] * (1 - stats[k]) / Rv) for k in ("box", "sup", "ellipsoid")},
        }
        out["levels"][lv] = stats
    if not isinstance(level, (list, tuple)):
        out.update(out["levels"][level])
    return out


class _safe:
    """Picklable wrapper turning a divergence into ``None``."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, args):
        from lsa_infer.errors import DivergenceError

        try:
            return self.fn(args)
        except DivergenceError:
            return None
