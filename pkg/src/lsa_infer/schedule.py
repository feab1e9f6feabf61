"""Step sizes, Lyapunov stability constants and assumption checkers.

The checkers never raise on a failed condition.  They return an
:class:`AssumptionReport` listing each inequality with both sides, because at
desk-scale ``n`` the formal thresholds are usually out of reach while the
empirical rates remain measurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lsa_infer.errors import LsaError, SingularMatrixError

__all__ = [
    "StepSchedule",
    "StabilityConstants",
    "AssumptionReport",
    "step_size",
    "lyapunov_solve",
    "q_norm",
    "stability_constants",
    "effective_p",
    "check_step_size",
    "block_size_h",
    "k0_condition_terms",
    "sample_size_a5_rhs",
    "q_weight_bound",
    "check_sample_size",
    "check_bootstrap_assumptions",
    "rate_envelope_phi",
    "telescoping_sum",
]


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying steps ``alpha_k = c0 / (k + k0)**gamma``."""

    c0: float
    gamma: float
    k0: int = 0

    def __post_init__(self):
        if not self.c0 > 0:
            raise LsaError("c0 must be positive")
        if not 0.5 < self.gamma < 1:
            raise LsaError("gamma must lie in (1/2, 1)")
        if self.k0 < 0 or int(self.k0) != self.k0:
            raise LsaError("k0 must be a nonnegative integer")
        object.__setattr__(self, "k0", int(self.k0))

    def alpha(self, k):
        """Vectorised step size; ``k + k0`` must be positive."""
        k = np.asarray(k, dtype=float)
        if np.any(k + self.k0 <= 0):
            raise LsaError("step size undefined at k + k0 = 0")
        out = self.c0 * (k + self.k0) ** (-self.gamma)
        return float(out) if out.ndim == 0 else out

    def alphas(self, n: int) -> np.ndarray:
        """``alpha_1 .. alpha_{n-1}`` stored at indices ``1 .. n-1``; index 0 is NaN."""
        out = np.full(n, np.nan)
        if n > 1:
            out[1:] = self.alpha(np.arange(1, n))
        return out

    def to_dict(self) -> dict:
        return {"c0": self.c0, "gamma": self.gamma, "k0": self.k0}


def step_size(schedule: StepSchedule, k: int) -> float:
    return schedule.alpha(k)


def telescoping_sum(schedule: StepSchedule, b: float, k: int) -> float:
    """``sum_{j=1}^k alpha_j prod_{l=j+1}^k (1 - alpha_l b)`` by the forward recursion
    ``S_j = (1 - alpha_j b) S_{j-1} + alpha_j``.

    For ``b != 0`` this telescopes to ``(1 - prod_{l=1}^k (1 - alpha_l b)) / b``.
    """
    if k < 0:
        raise LsaError("k must be >= 0")
    S = 0.0
    for a in schedule.alphas(k + 1)[1:]:
        S = (1.0 - a * b) * S + a
    return float(S)


def lyapunov_solve(Abar, P) -> np.ndarray:
    """Solve ``Abar^T Q + Q Abar = P`` through the vectorised d^2 system.

    Column-major vectorisation gives ``(I kron Abar^T + Abar^T kron I) vec Q = vec P``.
    """
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    d = Abar.shape[0]
    eye = np.eye(d)
    K = np.kron(eye, Abar.T) + np.kron(Abar.T, eye)
    lu_scale = np.max(np.abs(K))
    try:
        sv = np.linalg.svd(K, compute_uv=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise SingularMatrixError(str(exc)) from exc
    if sv[-1] < 1e-13 * max(lu_scale, 1e-300):
        raise SingularMatrixError("Lyapunov operator is singular: -Abar is not Hurwitz")
    Q = np.linalg.solve(K, P.reshape(-1, order="F")).reshape(d, d, order="F")
    Q = 0.5 * (Q + Q.T)
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise SingularMatrixError("Lyapunov solution is not positive definite: -Abar is not Hurwitz")
    return Q


def _sym_sqrt(Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if np.max(np.abs(Q - Q.T)) > 1e-12 * max(np.max(np.abs(Q)), 1.0):
        raise LsaError("Q must be symmetric")
    w, V = np.linalg.eigh(Q)
    return (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


def q_norm(M, Q) -> float:
    """Q-weighted operator norm ``||Q^{1/2} M Q^{-1/2}||``."""
    root, inv_root = _sym_sqrt(np.asarray(Q, dtype=float))
    return float(np.linalg.norm(root @ np.asarray(M, dtype=float) @ inv_root, 2))


@dataclass(frozen=True)
class StabilityConstants:
    Q: np.ndarray
    a: float
    alpha_inf: float
    kappa_Q: float
    b_Q: float
    bA: float
    P: np.ndarray
    Abar_q_norm: float

    def to_dict(self) -> dict:
        return {
            "Q": self.Q.tolist(),
            "a": self.a,
            "alpha_inf": self.alpha_inf,
            "kappa_Q": self.kappa_Q,
            "b_Q": self.b_Q,
            "bA": self.bA,
            "Abar_q_norm": self.Abar_q_norm,
        }


def stability_constants(Abar, P=None, bA: float = 1.0) -> StabilityConstants:
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    P = np.eye(Abar.shape[0]) if P is None else np.atleast_2d(np.asarray(P, dtype=float))
    Q = lyapunov_solve(Abar, P)
    lam_P = np.linalg.eigvalsh(0.5 * (P + P.T))[0]
    lam_Q = np.linalg.eigvalsh(Q)
    norm_Q = lam_Q[-1]
    kappa = lam_Q[-1] / lam_Q[0]
    a_norm = q_norm(Abar, Q)
    a = lam_P / (2 * norm_Q)
    alpha_inf = min(lam_P / (2 * kappa * a_norm**2), norm_Q / lam_P)
    return StabilityConstants(
        Q=Q,
        a=float(a),
        alpha_inf=float(alpha_inf),
        kappa_Q=float(kappa),
        b_Q=float(math.sqrt(kappa) * bA),
        bA=float(bA),
        P=P,
        Abar_q_norm=a_norm,
    )


@dataclass
class AssumptionReport:
    """Named inequalities ``actual (op) required`` with satisfied flags."""

    entries: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e["satisfied"] for e in self.entries)

    def add(self, name: str, actual: float, required: float, satisfied: bool, relation: str = ">="):
        self.entries.append(
            {"name": name, "actual": float(actual), "relation": relation,
             "required": float(required), "satisfied": bool(satisfied)}
        )

    def extend(self, other: "AssumptionReport") -> "AssumptionReport":
        self.entries.extend(other.entries)
        self.notes.extend(other.notes)
        return self

    def failing(self) -> list[str]:
        return [e["name"] for e in self.entries if not e["satisfied"]]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failing": self.failing(), "entries": self.entries, "notes": self.notes}

    def table(self) -> str:
        rows = [("condition", "actual", "rel", "required", "ok")]
        for e in self.entries:
            rows.append((e["name"], f"{e['actual']:.6g}", e["relation"], f"{e['required']:.6g}",
                         "yes" if e["satisfied"] else "NO"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"passed: {self.passed}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def effective_p(p: float, d: int = 1) -> float:
    """``max(p, log d)`` floored at 2 (natural log)."""
    return max(float(p), math.log(d) if d >= 1 else 0.0, 2.0)


def check_step_size(schedule: StepSchedule, consts: StabilityConstants, p: float = 2.0,
                    d: int = 1) -> AssumptionReport:
    """Step-size assumption: ``c0 <= alpha_inf`` and the two ``k0`` lower bounds."""
    rep = AssumptionReport()
    p_eff = effective_p(p, d)
    if p_eff != p:
        rep.notes.append(f"p raised from {p:g} to {p_eff:g} (p >= 2 and p >= log d)")
    c0, g, k0 = schedule.c0, schedule.gamma, schedule.k0
    rep.add("c0 <= alpha_inf", c0, consts.alpha_inf, c0 <= consts.alpha_inf, "<=")
    k0_a = (16.0 / (consts.a * c0)) ** (1.0 / (1.0 - g))
    k0_b = (2.0 * p_eff * consts.kappa_Q * consts.bA**2 / (consts.a * c0)) ** (1.0 / g)
    rep.add("k0 >= (16/(a c0))^(1/(1-gamma))", k0, k0_a, k0 >= k0_a)
    rep.add("k0 >= (2 p kappa_Q bA^2/(a c0))^(1/gamma)", k0, k0_b, k0 >= k0_b)
    return rep


def block_size_h(n: int, d: int, consts: StabilityConstants, schedule: StepSchedule) -> int:
    g = schedule.gamma
    inner = 8 * consts.bA * math.sqrt(consts.kappa_Q) * (1 + 2 * math.log(10 * n**3 * d))
    return math.ceil((inner / (consts.a * (2 - 2**g))) ** 2)


def k0_condition_terms(n: int, d: int, consts: StabilityConstants, schedule: StepSchedule) -> dict:
    """The four lower bounds on ``k0**gamma`` for the bootstrap step-size condition."""
    h = block_size_h(n, d, consts, schedule)
    c0, g = schedule.c0, schedule.gamma
    sk = math.sqrt(consts.kappa_Q)
    bA = consts.bA
    return {
        "h": h,
        "k0^g >= 2 h bA sqrt(kappa_Q)": 2 * h * bA * sk,
        "k0^g >= c0 h / min(1, alpha_inf)": c0 * h / min(1.0, consts.alpha_inf),
        "k0^g >= 8 bA^2 c0 sqrt(kappa_Q) e h / (a (2 - 2^g))":
            8 * bA**2 * c0 * sk * math.e * h / (consts.a * (2 - 2**g)),
        "k0^g >= c0 log^2(5n) / min(1, a)": c0 * math.log(5 * n) ** 2 / min(1.0, consts.a),
    }


def q_weight_bound(consts: StabilityConstants, schedule: StepSchedule) -> float:
    """Uniform bound ``sqrt(kappa_Q) (c0 + 2 / (a (1 - gamma)))`` on ``||Q_l||``."""
    return math.sqrt(consts.kappa_Q) * (schedule.c0 + 2.0 / (consts.a * (1.0 - schedule.gamma)))


def sample_size_a5_rhs(n: int, d: int, eps_sup: float, c_q_bound: float) -> float:
    """Right side of the bootstrap sample-size condition on ``lambda_min(Sigma_inf)``."""
    L = math.log(10 * d * n)
    s = eps_sup**2 * c_q_bound**2
    return 8 * math.sqrt(2) * s * math.sqrt(L) / math.sqrt(n) + 8 * s * L / (3 * n)


def check_sample_size(n: int, schedule: StepSchedule, lambda_min_sigma_inf: float,
                      c_sigma: float) -> AssumptionReport:
    """``n >= k0 + 1`` and ``n^(1-gamma) >= 2 c_sigma / lambda_min(Sigma_inf)``."""
    rep = AssumptionReport()
    rep.add("n >= k0 + 1", n, schedule.k0 + 1, n >= schedule.k0 + 1)
    lhs = n ** (1 - schedule.gamma)
    rhs = 2 * c_sigma / lambda_min_sigma_inf
    rep.add("n^(1-gamma) >= 2 C_sigma / lambda_min(Sigma_inf)", lhs, rhs, lhs >= rhs)
    return rep


def check_bootstrap_assumptions(
    schedule: StepSchedule,
    consts: StabilityConstants,
    n: int,
    d: int,
    eps_sup: float,
    lambda_min_sigma_inf: float,
    c_q_bound: float | None = None,
    c_sigma: float | None = None,
) -> AssumptionReport:
    """Bootstrap-validity conditions: four ``k0`` branches, the sample-size
    inequality for ``lambda_min(Sigma_inf)`` and, when ``c_sigma`` is given,
    the Gaussian-approximation sample-size condition."""
    if c_q_bound is None:
        c_q_bound = q_weight_bound(consts, schedule)
    rep = AssumptionReport()
    terms = k0_condition_terms(n, d, consts, schedule)
    h = terms.pop("h")
    rep.notes.append(f"h(n) = {h}")
    k0g = schedule.k0**schedule.gamma
    for name, rhs in terms.items():
        rep.add(name, k0g, rhs, k0g >= rhs)
    rhs = sample_size_a5_rhs(n, d, eps_sup, c_q_bound)
    rep.add("lambda_min(Sigma_inf) >= A5 sample-size bound", lambda_min_sigma_inf, rhs,
            lambda_min_sigma_inf >= rhs)
    if c_sigma is not None:
        rep.extend(check_sample_size(n, schedule, lambda_min_sigma_inf, c_sigma))
    else:
        rep.notes.append("Sigma_n gap constant not supplied; sample-size condition skipped")
    return rep


def rate_envelope_phi(n: int, schedule: StepSchedule) -> float:
    c0, g = schedule.c0, schedule.gamma
    if math.isclose(g, 2.0 / 3.0, rel_tol=0.0, abs_tol=1e-12):
        return c0**1.5 * math.log(n) / math.sqrt(n)
    if g < 2.0 / 3.0:
        return 2 * c0**1.5 / ((1 - 1.5 * g) * n ** (1.5 * g - 0.5))
    return c0**1.5 / ((1.5 * g - 1) * math.sqrt(n))
