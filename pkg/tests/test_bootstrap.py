import math

import numpy as np
import pytest

import oracles
from lsa_infer import _rng
from lsa_infer.bootstrap import (
    BootstrapEnsemble,
    WeightScheme,
    bootstrap_run,
    confidence_sets,
    coverage_experiment,
    order_statistic,
    sample_weight,
)
from lsa_infer.engine import lsa_run
from lsa_infer.errors import LsaError
from lsa_infer.model import make_from_atoms, make_random_hurwitz
from lsa_infer.schedule import StepSchedule

N_DRAWS = 10**6
KINDS = ("two_point", "exponential", "poisson_shifted")


@pytest.fixture(scope="module")
def inst1():
    return make_random_hurwitz(1, 3, (1.0, 1.0), 0.5, a_noise_scale=0.5)


@pytest.mark.parametrize("kind", KINDS)
def test_weight_mean_and_variance(kind):
    w = WeightScheme(kind).draw(_rng.stream(0, 99), N_DRAWS)
    se_mean = w.std(ddof=1) / math.sqrt(N_DRAWS)
    assert abs(w.mean() - 1.0) <= 5 * se_mean
    sq = (w - 1.0) ** 2
    assert abs(sq.mean() - 1.0) <= 5 * sq.std(ddof=1) / math.sqrt(N_DRAWS)
    assert np.all(w >= 0)


def test_two_point_mean_tolerance():
    w = WeightScheme("two_point").draw(_rng.stream(1), N_DRAWS)
    assert abs(w.mean() - 1.0) <= 0.005
    assert set(np.unique(w)) == {0.0, 2.0}


def test_m3_values():
    assert WeightScheme("two_point").m3 == 1.0
    assert WeightScheme("exponential").m3 == pytest.approx(oracles.exponential_m3(), rel=1e-9)
    assert WeightScheme("constant").m3 == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_m3_monte_carlo(kind):
    scheme = WeightScheme(kind)
    c = np.abs(scheme.draw(_rng.stream(2, 7), N_DRAWS) - 1.0) ** 3
    assert abs(c.mean() - scheme.m3) <= 5 * c.std(ddof=1) / math.sqrt(N_DRAWS)


def test_scheme_aliases_and_errors():
    assert WeightScheme.of("exp").kind == "exponential"
    assert WeightScheme.of("poisson").kind == "poisson_shifted"
    assert WeightScheme.of(WeightScheme("two_point")).kind == "two_point"
    assert WeightScheme("constant").variance == 0.0
    with pytest.raises(LsaError):
        WeightScheme("gamma")
    assert sample_weight("two_point", _rng.stream(3)) in (0.0, 2.0)


def test_constant_weights_collapse(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 300, theta0=[1.0, -2.0], seed=2)
    ens = bootstrap_run(traj, 4, "constant", seed=1)
    for row in ens.averages:
        np.testing.assert_array_equal(row, traj.average)


def test_seed_determinism(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 200, seed=5)
    a = bootstrap_run(traj, 2, seed=10)
    b = bootstrap_run(traj, 2, seed=10)
    c = bootstrap_run(traj, 2, seed=11)
    np.testing.assert_array_equal(a.averages, b.averages)
    assert not np.array_equal(a.averages, c.averages)
    np.testing.assert_array_equal(a.base_average, c.base_average)


def test_base_trajectory_untouched(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 200, seed=5)
    before = (traj.iterates.copy(), traj.A.copy(), traj.b.copy(), traj.average.copy())
    bootstrap_run(traj, 5, seed=1)
    bootstrap_run(traj, 5, "exp", seed=2)
    for old, new in zip(before, (traj.iterates, traj.A, traj.b, traj.average)):
        np.testing.assert_array_equal(old, new)
    assert not traj.iterates.flags.writeable


def test_conditional_mean_self_consistency(inst1):
    traj = lsa_run(inst1, StepSchedule(0.5, 2 / 3, 1), 128, seed=4)
    M = 10**4
    a = bootstrap_run(traj, M, seed=1).averages[:, 0]
    b = bootstrap_run(traj, M, seed=2).averages[:, 0]
    se = math.sqrt(a.var(ddof=1) / M + b.var(ddof=1) / M)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_one_step_bootstrap_mean(inst1):
    traj = lsa_run(inst1, StepSchedule(0.5, 2 / 3, 1), 2, theta0=[0.3], seed=6)
    M = 10**5
    # with n = 2 the average is (theta_0 + theta_1^b) / 2
    theta1_b = 2 * bootstrap_run(traj, M, seed=3).averages[:, 0] - traj.theta0[0]
    se = theta1_b.std(ddof=1) / math.sqrt(M)
    assert abs(theta1_b.mean() - traj.iterates[1, 0]) <= 4 * se


def test_bootstrap_run_rejects_zero_replicates(inst2):
    with pytest.raises(LsaError):
        bootstrap_run(lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 20), 0)


def _ensemble(deltas, base):
    deltas = np.asarray(deltas, dtype=float)
    return BootstrapEnsemble(deltas.shape[0], base + deltas, np.asarray(base, dtype=float), 100,
                             WeightScheme("two_point"), 0)


def test_degenerate_sets_have_zero_radius(inst2):
    traj = lsa_run(inst2, StepSchedule(0.5, 2 / 3, 3), 200, seed=5)
    rep = confidence_sets(bootstrap_run(traj, 60, "constant"), 0.9)
    assert rep.degenerate
    assert rep.sup_radius == 0.0 and rep.ellipsoid_radius == 0.0
    np.testing.assert_array_equal(rep.lower, traj.average)
    np.testing.assert_array_equal(rep.upper, traj.average)


def test_degenerate_nonzero_ensemble_raises():
    line = np.outer(np.linspace(-1, 1, 60), [1.0, 2.0])
    with pytest.raises(LsaError, match="degenerate"):
        confidence_sets(_ensemble(line, np.zeros(2)), 0.9)


def test_sup_radius_matches_sort():
    rng = np.random.default_rng(0)
    half = rng.normal(size=(50, 2))
    ens = _ensemble(np.vstack([half, -half]), np.array([1.0, 2.0]))
    rep = confidence_sets(ens, 0.5)
    delta = ens.averages - ens.base_average
    assert rep.sup_radius == np.sort(np.max(np.abs(delta), axis=1))[49]


def test_order_statistic_rule():
    x = np.arange(1.0, 11.0)[::-1]
    assert order_statistic(x, 0.9) == 9.0
    assert order_statistic(x, 0.91) == 10.0
    assert order_statistic(x, 0.01) == 1.0


def test_containment_is_per_coordinate():
    rng = np.random.default_rng(1)
    ens = _ensemble(rng.normal(size=(200, 3)), np.zeros(3))
    rep = confidence_sets(ens, 0.9)
    for target in (np.zeros(3), np.array([0.0, 0.0, 10.0]), rep.upper, rep.lower - 1e-9):
        rep_t = confidence_sets(ens, 0.9, target)
        inside = bool(np.all((rep_t.lower <= target) & (target <= rep_t.upper)))
        assert rep_t.contains_target is inside
    assert rep.contains_target is None
    assert np.all(rep.lower <= rep.upper) and rep.sup_radius >= 0 and rep.ellipsoid_radius >= 0


def test_nested_levels():
    rng = np.random.default_rng(2)
    ens = _ensemble(rng.standard_t(4, size=(300, 2)), np.zeros(2))
    reps = [confidence_sets(ens, lv) for lv in (0.5, 0.8, 0.9, 0.95)]
    for a, b in zip(reps, reps[1:]):
        assert b.sup_radius >= a.sup_radius and b.ellipsoid_radius >= a.ellipsoid_radius
        assert np.all(b.lower <= a.lower) and np.all(b.upper >= a.upper)


def test_confidence_report_serialises():
    ens = _ensemble(np.random.default_rng(3).normal(size=(80, 2)), np.ones(2))
    doc = confidence_sets(ens, 0.9, np.ones(2)).to_dict()
    assert doc["contains_target"] is True and len(doc["intervals"]) == 2


def test_coverage_noiseless_is_degenerate_and_full():
    inst = make_from_atoms([np.eye(2)], [[1.0, 2.0]], [1.0])
    out = coverage_experiment(inst, StepSchedule(0.5, 2 / 3, 1), 50, 5, 100, 0.9, theta0=[1.0, 2.0])
    assert out["box"] == 1.0 and out["sup"] == 1.0
    assert out["degenerate"] == 100


def test_coverage_monotone_in_level(inst2):
    out = coverage_experiment(inst2, StepSchedule(1.0, 2 / 3, 1), 64, 50, 100, [0.8, 0.95], seed=3)
    lo, hi = out["levels"][0.8], out["levels"][0.95]
    assert lo["box"] <= hi["box"] and lo["sup"] <= hi["sup"] and lo["ellipsoid"] <= hi["ellipsoid"]
    assert all(a <= b for a, b in zip(lo["coordinate"], hi["coordinate"]))


def test_coverage_requires_outer_replications(inst2):
    with pytest.raises(LsaError):
        coverage_experiment(inst2, StepSchedule(1.0, 2 / 3, 1), 64, 50, 99)
