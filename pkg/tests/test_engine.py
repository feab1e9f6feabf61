import numpy as np
import pytest

import oracles
from lsa_infer.covariance import q_matrices
from lsa_infer.engine import (
    average_identity_residual,
    batch_averages,
    error_decompose,
    gamma_product,
    linear_statistic_identity,
    lsa_from_observations,
    lsa_run,
    stability_diagnostic,
)
from lsa_infer.errors import DivergenceError, LsaError
from lsa_infer.model import make_from_atoms, make_gaussian_identity_1d, make_random_hurwitz
from lsa_infer.schedule import StepSchedule, stability_constants, telescoping_sum


class _FixedSteps:
    """Schedule stand-in with explicit step sizes ``alphas[1:]``."""

    def __init__(self, alphas):
        self._a = np.asarray(alphas, dtype=float)

    def alphas(self, n):
        out = np.full(n, np.nan)
        out[1:] = self._a[1:n]
        return out


def _const_obs(A, b, n):
    d = len(b)
    As = np.concatenate([np.full((1, d, d), np.nan), np.repeat(np.asarray(A, float)[None], n - 1, 0)])
    bs = np.concatenate([np.full((1, d), np.nan), np.repeat(np.asarray(b, float)[None], n - 1, 0)])
    return As, bs


def test_one_step_from_zero():
    inst = make_from_atoms([np.eye(2)], [[1.0, 1.0]], [1.0])
    A, b = _const_obs(np.eye(2), [1.0, 1.0], 2)
    traj = lsa_from_observations(inst, _FixedSteps([np.nan, 0.1]), A, b)
    np.testing.assert_allclose(traj.iterates[1], [0.1, 0.1], rtol=1e-15)


def test_noiseless_q_norm_nonincreasing():
    inst = make_random_hurwitz(3, 5, noise_scale=0.0)
    c = stability_constants(inst.Abar)
    sched = StepSchedule(0.9 * c.alpha_inf, 0.7, 1)
    traj = lsa_run(inst, sched, 300, theta0=np.ones(3) * 3, seed=1)
    errs = [np.sqrt((th - inst.theta_star) @ c.Q @ (th - inst.theta_star)) for th in traj.iterates]
    assert all(b <= a + 1e-14 for a, b in zip(errs, errs[1:]))


def test_recursion_replay_and_average(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 200, seed=4)
    th = traj.theta0.copy()
    for k in range(1, traj.n):
        th = th - traj.alphas[k] * (traj.A[k] @ th - traj.b[k])
        np.testing.assert_array_equal(th, traj.iterates[k])
    np.testing.assert_allclose(traj.average, traj.iterates.mean(axis=0), rtol=1e-12)


def test_same_seed_identical(inst2):
    s = StepSchedule(0.5, 2 / 3, 3)
    a = lsa_run(inst2, s, 300, seed=8)
    b = lsa_run(inst2, s, 300, seed=8)
    np.testing.assert_array_equal(a.iterates, b.iterates)
    assert not np.array_equal(a.iterates, lsa_run(inst2, s, 300, seed=9).iterates)


def test_trajectory_is_frozen(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 50)
    with pytest.raises(ValueError):
        traj.iterates[0, 0] = 1.0


def test_divergence_guard(inst2):
    with pytest.raises(DivergenceError):
        lsa_run(inst2, StepSchedule(50.0, 0.51, 0), 2000, seed=0)


def test_n_too_small(inst2):
    with pytest.raises(LsaError):
        lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 1)


def test_batch_matches_single_runs(inst2):
    s = StepSchedule(0.5, 2 / 3, 3)
    avg = batch_averages(inst2, s, 100, None, 3, keys=(7,), R=5, chunk=2)
    for r in range(5):
        np.testing.assert_allclose(avg[r], lsa_run(inst2, s, 100, seed=3, keys=(7, r)).average, rtol=1e-13)


def test_gamma_identity_when_empty(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 20)
    np.testing.assert_array_equal(gamma_product(traj, 5, 4), np.eye(2))


def test_gamma_scalar_product():
    inst = make_from_atoms([[[2.0]]], [[1.0]], [1.0])
    A, b = _const_obs([[2.0]], [1.0], 3)
    traj = lsa_from_observations(inst, _FixedSteps([np.nan, 0.1, 0.2]), A, b)
    assert gamma_product(traj, 1, 2)[0, 0] == pytest.approx(0.48, rel=1e-15)


def test_gamma_random_against_loop():
    inst = make_random_hurwitz(3, 11)
    traj = lsa_run(inst, StepSchedule(0.5, 0.6, 2), 30, seed=2)
    G = np.eye(3)
    for ell in range(4, 10):
        G = (np.eye(3) - traj.alphas[ell] * traj.A[ell]) @ G
    np.testing.assert_allclose(gamma_product(traj, 4, 9), G, rtol=0, atol=1e-13)


def test_decompose_noiseless():
    inst = make_random_hurwitz(2, 3, noise_scale=0.0)
    traj = lsa_run(inst, StepSchedule(0.5, 2 / 3, 2), 100, theta0=np.ones(2))
    dec = error_decompose(traj, L=2)
    # the exactly solved theta_star leaves round-off of order 1e-16 in eps
    assert np.abs(dec.J).max() <= 1e-14 and np.abs(dec.H).max() <= 1e-14
    np.testing.assert_allclose(dec.transient, dec.error, rtol=0, atol=1e-14)


def test_h0_recursion_replay(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 400, seed=5)
    dec = error_decompose(traj, L=0)
    H = dec.error - dec.transient - dec.J[0]
    eps_J = dec.J[0]
    h = np.zeros(2)
    for k in range(1, traj.n):
        h = (np.eye(2) - traj.alphas[k] * traj.A[k]) @ h - traj.alphas[k] * (traj.A[k] - inst2.Abar) @ eps_J[k - 1]
        np.testing.assert_allclose(h, H[k], rtol=0, atol=1e-12 * (1 + np.linalg.norm(H[k])))


def test_h0_splits_at_depth_two(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 1000, seed=6)
    dec2 = error_decompose(traj, L=2)
    lhs = dec2.H[0]
    rhs = dec2.J[1] + dec2.J[2] + dec2.H_last
    rel = np.linalg.norm(lhs - rhs, axis=1) / (1 + np.linalg.norm(lhs, axis=1))
    assert rel.max() <= 1e-10


def test_decompose_needs_theta_star(inst2):
    with pytest.raises(LsaError):
        error_decompose(lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 10), L=3)


@pytest.mark.parametrize("d,n,tol", [(1, 64, 1e-10), (4, 512, 1e-8)])
def test_linear_statistic_identity(d, n, tol):
    inst = make_gaussian_identity_1d(0) if d == 1 else make_random_hurwitz(d, 2)
    s = StepSchedule(0.5, 2 / 3, 2)
    traj = lsa_run(inst, s, n, seed=3)
    res = linear_statistic_identity(error_decompose(traj, 0), q_matrices(inst.Abar, s, n), traj.noises)
    assert res <= tol


def test_linear_statistic_identity_noiseless():
    inst = make_random_hurwitz(2, 3, noise_scale=0.0)
    s = StepSchedule(0.5, 2 / 3, 2)
    traj = lsa_run(inst, s, 50)
    res = linear_statistic_identity(error_decompose(traj, 0), q_matrices(inst.Abar, s, 50), traj.noises)
    assert res <= 1e-14


def test_average_identity(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 512, theta0=[2.0, -1.0], seed=1)
    assert average_identity_residual(traj, error_decompose(traj, 0)) <= 1e-10


def test_stability_diagnostic_noiseless_ratio():
    inst = make_random_hurwitz(2, 3, noise_scale=0.0)
    c = stability_constants(inst.Abar)
    out = stability_diagnostic(inst, StepSchedule(0.9 * c.alpha_inf, 0.7, 1), 1, 200, 2, 100, 0)
    assert out["stderr"] == pytest.approx(0.0, abs=1e-15)
    assert out["ratio"] <= 1


def test_stability_diagnostic_monte_carlo(inst2):
    c = stability_constants(inst2.Abar, bA=inst2.bA)
    s = StepSchedule(0.5 * c.alpha_inf, 0.7, 1)
    out = stability_diagnostic(inst2, s, 1, 300, 2, 1000, 0)
    assert out["empirical"] <= out["bound"] + 2 * out["stderr"]


def test_stability_bound_decreases(inst2):
    s = StepSchedule(0.1, 0.7, 1)
    bounds = [stability_diagnostic(inst2, s, 1, k, 2, 100, 0)["bound"] for k in (10, 20, 40)]
    assert bounds[0] > bounds[1] > bounds[2]


def test_telescoping_identity():
    s = StepSchedule(0.5, 0.7, 1)
    b = 1.5
    alphas = s.alphas(1001)
    for k in (1, 10, 100, 1000):
        closed = (1 - np.prod(1 - alphas[1:k + 1] * b)) / b
        assert telescoping_sum(s, b, k) == pytest.approx(closed, rel=1e-12)
        assert telescoping_sum(s, b, k) == pytest.approx(oracles.telescoping_lhs(alphas, b, k), rel=1e-12)
    assert telescoping_sum(s, b, 0) == 0.0
