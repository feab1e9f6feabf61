"""LSA problem instances with known ground truth.

An instance is a law for the observation pair ``(A, b)`` together with its
population quantities.  Synthetic instances are finite mixtures over explicit
atoms, so ``Abar``, ``bbar``, ``Sigma_eps``, ``bA`` and ``eps_sup`` are exact
rather than estimated.  The one exception is the 1D Gaussian instance used
for the lower-bound experiment.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as spla

from lsa_infer.errors import DimensionError, LsaError, SingularMatrixError

__all__ = [
    "LsaInstance",
    "MdpSpec",
    "solve_target",
    "noise_at_solution",
    "make_gaussian_identity_1d",
    "make_random_hurwitz",
    "make_td_generative",
    "make_from_atoms",
    "load_mdp",
]


def _frozen(x) -> np.ndarray:
    a = np.array(x, dtype=float)
    a.setflags(write=False)
    return a


def solve_target(Abar, bbar) -> np.ndarray:
    """Solve ``Abar @ theta = bbar`` by LU with a pivot-size guard."""
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    bbar = np.atleast_1d(np.asarray(bbar, dtype=float))
    if Abar.shape != (bbar.size, bbar.size):
        raise DimensionError(f"Abar has shape {Abar.shape}, bbar has size {bbar.size}")
    scale = np.max(np.abs(Abar))
    with warnings.catch_warnings():
        # an exactly singular matrix is reported below as SingularMatrixError
        warnings.simplefilter("ignore", spla.LinAlgWarning)
        lu, piv = spla.lu_factor(Abar, check_finite=True)
    if scale == 0.0 or np.min(np.abs(np.diag(lu))) < 1e-14 * scale:
        raise SingularMatrixError("system matrix is singular to working precision")
    return spla.lu_solve((lu, piv), bbar)


@dataclass(frozen=True, eq=False)
class LsaInstance:
    """Observation law plus exact population quantities.

    Raw draws ``z`` are atom indices for mixture instances and standard
    normal draws for the Gaussian instance; :meth:`observe` maps them to
    ``(A, b)``.
    """

    kind: str
    Abar: np.ndarray
    bbar: np.ndarray
    theta_star: np.ndarray
    Sigma_eps: np.ndarray
    bA: float
    eps_sup: float
    atoms_A: np.ndarray | None = None
    atoms_b: np.ndarray | None = None
    probs: np.ndarray | None = None
    unbounded_noise: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.bbar.size

    @property
    def is_atomic(self) -> bool:
        return self.atoms_A is not None

    def sample_z(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.is_atomic:
            cdf = np.cumsum(self.probs)
            u = rng.random(size)
            return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), self.probs.size - 1)
        return rng.standard_normal(size)

    def observe(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(A, b)`` with shapes ``z.shape + (d, d)`` and ``z.shape + (d,)``."""
        z = np.asarray(z)
        if self.is_atomic:
            return self.atoms_A[z], self.atoms_b[z]
        # 1D Gaussian: A = 1, b = -xi
        A = np.ones(z.shape + (1, 1))
        return A, -z[..., None].astype(float)

    def sample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        return self.observe(self.sample_z(rng, size))

    def noise(self, z) -> np.ndarray:
        """Noise at the solution for raw draws ``z`` (vectorised)."""
        A, b = self.observe(z)
        return (A - self.Abar) @ self.theta_star - (b - self.bbar)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "dim": self.dim,
            "Abar": self.Abar.tolist(),
            "bbar": self.bbar.tolist(),
            "theta_star": self.theta_star.tolist(),
            "Sigma_eps": self.Sigma_eps.tolist(),
            "bA": self.bA,
            "eps_sup": self.eps_sup,
            "unbounded_noise": self.unbounded_noise,
        }
        out.update(self.meta)
        return out


def noise_at_solution(A, b, instance: LsaInstance) -> np.ndarray:
    """``eps = (A - Abar) theta* - (b - bbar)`` for one observation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    d = instance.dim
    if A.shape != (d, d) or b.shape != (d,):
        raise DimensionError(f"expected A {(d, d)} and b {(d,)}, got {A.shape} and {b.shape}")
    return (A - instance.Abar) @ instance.theta_star - (b - instance.bbar)


def make_gaussian_identity_1d(seed: int | None = None) -> LsaInstance:
    """1D instance ``A_k = 1``, ``b_k = -xi_k`` with standard normal ``xi_k``.

    The noise is unbounded, so the instance is flagged and skipped by the
    boundedness checks.  ``seed`` is recorded for provenance only; streams
    are seeded at run time.
    """
    return LsaInstance(
        kind="lower_bound_1d",
        Abar=_frozen([[1.0]]),
        bbar=_frozen([0.0]),
        theta_star=_frozen([0.0]),
        Sigma_eps=_frozen([[1.0]]),
        bA=1.0,
        eps_sup=float("inf"),
        unbounded_noise=True,
        meta={"seed": seed},
    )


def make_from_atoms(atoms_A, atoms_b, probs, kind: str = "atoms", meta: dict | None = None) -> LsaInstance:
    """Build an instance from an explicit finite observation law."""
    atoms_A = np.asarray(atoms_A, dtype=float)
    atoms_b = np.asarray(atoms_b, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if atoms_A.ndim != 3 or atoms_b.ndim != 2 or len({atoms_A.shape[0], atoms_b.shape[0], probs.size}) != 1:
        raise DimensionError("atoms_A must be (m, d, d), atoms_b (m, d), probs (m,)")
    if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-12):
        raise LsaError("atom probabilities must be nonnegative and sum to 1")
    Abar = np.einsum("m,mij->ij", probs, atoms_A)
    bbar = probs @ atoms_b
    theta_star = solve_target(Abar, bbar)
    dA = atoms_A - Abar
    eps = dA @ theta_star - (atoms_b - bbar)
    Sigma_eps = np.einsum("m,mi,mj->ij", probs, eps, eps)
    Sigma_eps = 0.5 * (Sigma_eps + Sigma_eps.T)
    support = probs > 0
    bA = max(
        np.linalg.norm(atoms_A[support], ord=2, axis=(1, 2)).max(),
        np.linalg.norm(dA[support], ord=2, axis=(1, 2)).max(),
    )
    eps_sup = float(np.linalg.norm(eps[support], axis=1).max())
    return LsaInstance(
        kind=kind,
        Abar=_frozen(Abar),
        bbar=_frozen(bbar),
        theta_star=_frozen(theta_star),
        Sigma_eps=_frozen(Sigma_eps),
        bA=float(bA),
        eps_sup=eps_sup,
        atoms_A=_frozen(atoms_A),
        atoms_b=_frozen(atoms_b),
        probs=_frozen(probs),
        meta=dict(meta or {}),
    )


def make_random_hurwitz(
    d: int,
    seed: int,
    spectrum_range: tuple[float, float] = (0.5, 1.5),
    noise_scale: float = 0.5,
    *,
    a_noise_scale: float | None = None,
    n_atoms: int | None = None,
    max_retries: int = 20,
) -> LsaInstance:
    """Random instance with ``-Abar`` Hurwitz and a finite atom noise law.

    ``Abar = U (D + N) U^T`` with ``D`` diagonal in ``spectrum_range``, ``N``
    strictly upper triangular and ``U`` orthogonal, so the eigenvalues are
    exactly the diagonal of ``D``.  Each atom perturbs ``A`` by
    ``a_noise_scale`` (defaults to ``noise_scale``) and ``b`` by
    ``noise_scale``; perturbations are recentred so the mixture mean is exact.
    """
    lo, hi = spectrum_range
    if not 0 < lo <= hi:
        raise LsaError("spectrum_range must satisfy 0 < lo <= hi")
    if d < 1:
        raise LsaError("d must be >= 1")
    if a_noise_scale is None:
        a_noise_scale = noise_scale
    m = n_atoms or max(2 * d + 2, 4)
    meta = {"seed": seed, "spectrum_range": [lo, hi], "noise_scale": noise_scale,
            "a_noise_scale": a_noise_scale, "n_atoms": m}
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        eig = rng.uniform(lo, hi, size=d)
        N = np.triu(rng.normal(scale=0.25 * lo, size=(d, d)), k=1)
        U, _ = np.linalg.qr(rng.normal(size=(d, d)))
        Abar = U @ (np.diag(eig) + N) @ U.T
        theta_star = rng.normal(size=d)
        probs = rng.dirichlet(np.full(m, 4.0))
        dA = rng.normal(size=(m, d, d)) / np.sqrt(d) * a_noise_scale
        db = rng.normal(size=(m, d)) * noise_scale
        dA -= np.einsum("m,mij->ij", probs, dA)
        db -= probs @ db
        atoms_A = Abar + dA
        atoms_b = Abar @ theta_star + db
        inst = make_from_atoms(atoms_A, atoms_b, probs, kind="random_hurwitz", meta=meta)
        if noise_scale == 0 and a_noise_scale == 0:
            return inst
        lam = np.linalg.eigvalsh(inst.Sigma_eps)
        if lam[0] > 1e-8 * max(lam[-1], 1e-300):
            return inst
    raise LsaError(f"could not draw a nonsingular Sigma_eps in {max_retries} attempts")


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Finite discounted MDP with a fixed policy and linear features.

    ``transition[s, a, s']``, ``reward[s, a]``, ``policy[s, a]``,
    ``features[s] -> R^d``.
    """

    transition: np.ndarray
    reward: np.ndarray
    policy: np.ndarray
    discount: float
    features: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        nu = np.asarray(self.policy, dtype=float)
        phi = np.asarray(self.features, dtype=float)
        S, A = nu.shape
        if P.shape != (S, A, S) or r.shape != (S, A) or phi.ndim != 2 or phi.shape[0] != S:
            raise DimensionError("inconsistent MDP array shapes")
        if np.any(P < 0) or np.any(np.abs(P.sum(-1) - 1) > 1e-12):
            raise LsaError("transition rows must be stochastic")
        if np.any(nu < 0) or np.any(np.abs(nu.sum(-1) - 1) > 1e-12):
            raise LsaError("policy rows must be stochastic")
        if not 0 <= self.discount < 1:
            raise LsaError("discount must lie in [0, 1)")
        for name, val in (("transition", P), ("reward", r), ("policy", nu), ("features", phi)):
            object.__setattr__(self, name, _frozen(val))

    @property
    def n_states(self) -> int:
        return self.policy.shape[0]

    @property
    def n_actions(self) -> int:
        return self.policy.shape[1]

    def policy_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """State transition matrix and expected reward under the policy."""
        P_nu = np.einsum("sa,sat->st", self.policy, self.transition)
        r_nu = np.einsum("sa,sa->s", self.policy, self.reward)
        return P_nu, r_nu


def load_mdp(source) -> MdpSpec:
    """MDP from a dict or JSON file with keys transitions, rewards, policy, features, discount."""
    if isinstance(source, (str, Path)):
        source = json.loads(Path(source).read_text())
    return MdpSpec(
        transition=source["transitions"],
        reward=source["rewards"],
        policy=source["policy"],
        discount=source["discount"],
        features=source["features"],
    )


def make_td_generative(
    mdp: MdpSpec,
    seed: int | None = None,
    state_dist=None,
    max_support: int = 100_000,
) -> LsaInstance:
    """TD(0) with linear features under the generative model.

    Each observation is a transition ``(s, a, s')`` with ``s ~ state_dist``
    (uniform by default), ``a ~ policy(.|s)``, ``s' ~ P(.|s, a)``, giving
    ``A = phi(s) (phi(s) - discount * phi(s'))^T`` and ``b = r(s, a) phi(s)``.
    Population quantities come from enumerating the finite support.
    """
    phi = mdp.features
    S, nA = mdp.n_states, mdp.n_actions
    if np.linalg.matrix_rank(phi) < phi.shape[1]:
        raise LsaError("feature matrix must have full column rank")
    mu = np.full(S, 1.0 / S) if state_dist is None else np.asarray(state_dist, dtype=float)
    if mu.shape != (S,) or np.any(mu < 0) or abs(mu.sum() - 1) > 1e-12:
        raise LsaError("state_dist must be a probability vector over states")
    if S * nA * S > max_support:
        raise LsaError(f"support size {S * nA * S} exceeds cap {max_support}")
    atoms_A, atoms_b, probs = [], [], []
    for s, a, t in itertools.product(range(S), range(nA), range(S)):
        p = mu[s] * mdp.policy[s, a] * mdp.transition[s, a, t]
        if p <= 0:
            continue
        atoms_A.append(np.outer(phi[s], phi[s] - mdp.discount * phi[t]))
        atoms_b.append(mdp.reward[s, a] * phi[s])
        probs.append(p)
    probs = np.asarray(probs)
    probs /= probs.sum()
    inst = make_from_atoms(atoms_A, atoms_b, probs, kind="td_generative",
                           meta={"seed": seed, "n_states": S, "n_actions": nA, "discount": mdp.discount})
    if np.min(np.linalg.eigvals(inst.Abar).real) <= 0:
        raise LsaError("TD system matrix is not stable (-Abar not Hurwitz) for this sampling law")
    return inst
