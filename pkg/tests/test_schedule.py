import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lsa_infer.errors import LsaError
from lsa_infer.model import make_random_hurwitz
from lsa_infer.schedule import (
    StabilityConstants,
    StepSchedule,
    block_size_h,
    check_bootstrap_assumptions,
    check_step_size,
    effective_p,
    lyapunov_solve,
    q_norm,
    rate_envelope_phi,
    sample_size_a5_rhs,
    stability_constants,
    step_size,
)


def _consts(a=1.0, kappa=1.0, bA=1.0, alpha_inf=0.5):
    return StabilityConstants(Q=np.eye(1), a=a, alpha_inf=alpha_inf, kappa_Q=kappa,
                              b_Q=math.sqrt(kappa) * bA, bA=bA, P=np.eye(1), Abar_q_norm=1.0)


def test_step_size_examples():
    assert step_size(StepSchedule(0.5, 2 / 3, 8), 0) == pytest.approx(0.125, rel=1e-14)
    assert step_size(StepSchedule(1.0, 0.75, 0), 1) == 1.0
    assert step_size(StepSchedule(0.3, 0.6, 16), 100) == pytest.approx(oracles.alpha(0.3, 0.6, 16, 100), rel=1e-14)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 0.3])
def test_gamma_domain(gamma):
    with pytest.raises(LsaError, match=r"gamma must lie in \(1/2, 1\)"):
        StepSchedule(1.0, gamma, 0)


@settings(max_examples=30, deadline=None)
@given(c0=st.floats(0.01, 5), gamma=st.floats(0.51, 0.99), k0=st.integers(0, 1000))
def test_alpha_strictly_decreasing(c0, gamma, k0):
    a = StepSchedule(c0, gamma, k0).alphas(200)[1:]
    assert np.all(a > 0) and np.all(np.diff(a) < 0)


def test_lyapunov_scalar():
    np.testing.assert_allclose(lyapunov_solve([[1.0]], [[2.0]]), [[1.0]])


def test_lyapunov_diagonal():
    np.testing.assert_allclose(lyapunov_solve(np.diag([1.0, 2.0]), np.eye(2)), np.diag([0.5, 0.25]), atol=1e-15)


def test_lyapunov_random_against_scipy():
    inst = make_random_hurwitz(6, 2)
    Q = lyapunov_solve(inst.Abar, np.eye(6))
    res = inst.Abar.T @ Q + Q @ inst.Abar - np.eye(6)
    assert np.linalg.norm(res, 2) <= 1e-10
    assert np.linalg.eigvalsh(Q)[0] > 0
    np.testing.assert_allclose(Q, oracles.lyapunov(inst.Abar, np.eye(6)), rtol=1e-9, atol=1e-12)


def test_lyapunov_rejects_non_hurwitz():
    with pytest.raises(LsaError):
        lyapunov_solve(np.diag([1.0, -1.0]), np.eye(2))


def test_stability_identity():
    c = stability_constants(np.eye(2), 2 * np.eye(2), 1.0)
    np.testing.assert_allclose(c.Q, np.eye(2))
    assert c.a == pytest.approx(1.0)
    assert c.kappa_Q == pytest.approx(1.0)
    assert c.Abar_q_norm == pytest.approx(1.0)
    assert c.alpha_inf == pytest.approx(0.5)
    assert c.b_Q == pytest.approx(1.0)


def test_stability_diag12():
    c = stability_constants(np.diag([1.0, 2.0]), np.eye(2))
    # Q = diag(0.5, 0.25): a = lambda_min(P) / (2 ||Q||) = 1 / (2 * 0.5)
    assert c.a == pytest.approx(1.0)
    assert c.kappa_Q == pytest.approx(2.0)


@settings(max_examples=15, deadline=None)
@given(d=st.integers(1, 6), seed=st.integers(0, 10**6))
def test_contraction_on_grid(d, seed):
    inst = make_random_hurwitz(d, seed)
    c = stability_constants(inst.Abar, None, inst.bA)
    assert c.kappa_Q >= 1 and c.a * c.alpha_inf <= 0.5 + 1e-15
    assert c.b_Q == pytest.approx(math.sqrt(c.kappa_Q) * inst.bA)
    for alpha in np.linspace(0, c.alpha_inf, 50):
        assert q_norm(np.eye(d) - alpha * inst.Abar, c.Q) ** 2 <= 1 - c.a * alpha + 1e-12


def test_check_step_size_worked_example():
    c = _consts(a=0.5)
    for k0, ok in ((10**6, True), (10**5, False)):
        rep = check_step_size(StepSchedule(0.5, 2 / 3, k0), c, p=2)
        assert rep.passed is ok
    rep = check_step_size(StepSchedule(0.5, 2 / 3, 10**5), c, p=2)
    req = [e["required"] for e in rep.entries[1:]]
    assert max(req) == pytest.approx(64**3, rel=1e-9)
    # second branch: (2 p kappa bA^2 / (a c0))^(1/gamma) = 16^(3/2)
    assert req[1] == pytest.approx(64.0, rel=1e-12)


def test_effective_p_floor():
    assert effective_p(math.log(1), 1) == 2.0
    rep = check_step_size(StepSchedule(0.5, 2 / 3, 10), _consts(), p=0.0, d=1)
    assert any("raised" in n for n in rep.notes)


@settings(max_examples=30, deadline=None)
@given(k0=st.integers(0, 10**7), extra=st.integers(0, 10**7))
def test_check_step_size_monotone_in_k0(k0, extra):
    c = _consts(a=0.3, kappa=2.0, bA=1.5, alpha_inf=1.0)
    if check_step_size(StepSchedule(0.5, 0.7, k0), c).passed:
        assert check_step_size(StepSchedule(0.5, 0.7, k0 + extra), c).passed


def test_h_example():
    c = _consts()
    expected = math.ceil((8 * (1 + 2 * math.log(1e4)) / (2 - 2 ** (2 / 3))) ** 2)
    assert block_size_h(10, 1, c, StepSchedule(1.0, 2 / 3, 0)) == expected


def test_h_monotone():
    c, s = _consts(), StepSchedule(1.0, 2 / 3, 0)
    hs = [block_size_h(n, 1, c, s) for n in range(1, 1001)]
    assert all(b >= a for a, b in zip(hs, hs[1:]))
    assert block_size_h(50, 2, c, s) > block_size_h(50, 1, c, s)


def test_bootstrap_assumptions_small_n_fails():
    rep = check_bootstrap_assumptions(StepSchedule(1.0, 2 / 3, 1), _consts(), 10, 1, 1.0, 1.0, 1.0)
    assert not rep.passed
    assert len(rep.failing()) >= 4
    assert all(name.startswith("k0^g") for name in rep.failing()[:4])


def test_a5_rhs_example():
    val = sample_size_a5_rhs(10**6, 2, 1.0, 1.0)
    L = math.log(2e7)
    assert val == pytest.approx(8 * math.sqrt(2) * math.sqrt(L) / 1e3 + 8 * L / 3e6, rel=1e-13)
    rep = check_bootstrap_assumptions(StepSchedule(1.0, 2 / 3, 1), _consts(), 10**6, 2, 1.0, 0.5, 1.0)
    entry = [e for e in rep.entries if "A5" in e["name"]][0]
    assert entry["required"] == pytest.approx(val) and entry["satisfied"] is (0.5 >= val)


def test_a5_flag_flips_with_n():
    flags = []
    for n in (10, 10**3, 10**5, 10**7):
        rep = check_bootstrap_assumptions(StepSchedule(1.0, 2 / 3, 1), _consts(), n, 2, 1.0, 0.5, 1.0)
        flags.append([e for e in rep.entries if "A5" in e["name"]][0]["satisfied"])
    assert flags[0] is False and flags[-1] is True


def test_phi_examples():
    assert rate_envelope_phi(1, StepSchedule(1.0, 2 / 3, 0)) == 0.0
    assert rate_envelope_phi(16, StepSchedule(1.0, 0.6, 0)) == pytest.approx(2 / (0.1 * 16**0.4), rel=1e-13)
    for n in (4, 100, 10**5):
        assert rate_envelope_phi(n, StepSchedule(1.0, 0.8, 0)) * math.sqrt(n) == pytest.approx(5.0, rel=1e-12)


def test_report_table_lists_every_condition():
    rep = check_step_size(StepSchedule(0.5, 2 / 3, 3), _consts())
    table = rep.table()
    assert table.count("\n") >= len(rep.entries) + 1
    assert rep.to_dict()["passed"] == rep.passed
