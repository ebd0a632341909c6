import numpy as np
import pytest

from chaplygin import BallModel, NoiseConfig, random_inertia
from chaplygin.geometry import TestFunction, inertia_field, zeta_field
from chaplygin.lab import (
    GeneratorReport,
    SphereTestReport,
    apply_generator,
    drift_theorem_report,
    generator_drift_split,
    mc_generator_estimate,
    mc_nh_drift,
    mc_q_generator_estimate,
    q_generator,
    sphere_decay_test,
    sphere_project,
    step_halving,
)
from chaplygin.lie import expm_skew, random_group_point

from conftest import random_points

FULL = NoiseConfig()
ANGULAR = NoiseConfig(translational=False)
TRANSLATIONAL = NoiseConfig(angular=False)


def fd_generator(model, f, s, noise, t=1e-4):
    """Generator with every field derivative replaced by a central difference."""
    to = model.basis.to_matrix

    def along(field, x):
        return f.d(model, x, field(model, x))

    def twice(field):
        y = field(model, s)
        plus, minus = s @ expm_skew(t * to(y)), s @ expm_skew(-t * to(y))
        return (along(field, plus) - along(field, minus)) / (2 * t)

    total = 0.0
    if noise.drift_active:
        P = model.at(s)
        total += f.d(model, s, -0.5 * P.solve(model.gram @ model.sum_nabla_I))
    if noise.angular:
        total += 0.5 * sum(twice(inertia_field(i)) for i in range(model.m))
    if noise.translational:
        total += 0.5 * sum(twice(zeta_field(a, -1.0)) for a in range(model.n - 1))
    return total


def test_generator_of_constant_is_zero(random_model, rng):
    s = random_group_point(rng, random_model.n).matrix
    f = TestFunction(np.zeros((random_model.n, random_model.n)))
    assert apply_generator(random_model, f, s) == 0.0


@pytest.mark.parametrize("noise", [FULL, ANGULAR, TRANSLATIONAL], ids=["full", "angular", "translational"])
def test_generator_matches_finite_differences(random_model, rng, noise):
    m = random_model
    for s in random_points(rng, m.n, 3):
        f = TestFunction(rng.standard_normal((m.n, m.n)))
        assert apply_generator(m, f, s, noise) == pytest.approx(fd_generator(m, f, s, noise), abs=1e-6)


def test_generator_split(random_model, rng):
    m = random_model
    for s in random_points(rng, m.n, 3):
        f = TestFunction(rng.standard_normal((m.n, m.n)))
        assert abs(apply_generator(m, f, s) - generator_drift_split(m, f, s)) < 1e-9


def test_sphere_eigenrates(n, rng):
    m = BallModel.homogeneous(n)
    s = random_group_point(rng, n).matrix
    c = rng.standard_normal(n)
    c /= np.linalg.norm(c)
    f = TestFunction.sphere_coordinate(c)
    assert apply_generator(m, f, s, FULL) == pytest.approx(-(n - 1) / 4 * f(s), abs=1e-12)
    assert apply_generator(m, f, s, ANGULAR) == pytest.approx(-(n - 1) / 8 * f(s), abs=1e-12)
    assert apply_generator(m, f, s, TRANSLATIONAL) == pytest.approx(-(n - 1) / 8 * f(s), abs=1e-12)


def test_q_generator_homogeneous_laplacian(n, rng):
    m = BallModel.homogeneous(n)
    s = random_group_point(rng, n).matrix
    f = TestFunction(rng.standard_normal((n, n)))
    assert q_generator(m, f, s) == pytest.approx(-(n - 1) / 2 * f(s), abs=1e-12)


def test_report_validation():
    with pytest.raises(ValueError):
        GeneratorReport(np.eye(3), None, 1.0, 1.0, 0.1, 1e-3, 1)
    bad = GeneratorReport(np.eye(3), None, 1.0, 1.0, float("nan"), 1e-3, 10)
    assert not bad.passed
    with pytest.raises(ValueError):
        SphereTestReport(np.array([1.0, 1.0, 0.0]), np.array([0.0, 1.0]), np.ones(2), np.ones(2),
                         0.5, 0.5, 0.01, 1.0, FULL)
    with pytest.raises(ValueError):
        SphereTestReport(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.5]), np.ones(2), np.ones(2),
                         0.5, 0.5, 0.01, 1.0, FULL)


def test_mc_generator_no_channels():
    m = BallModel.homogeneous(3)
    f = TestFunction(np.ones((3, 3)))
    rep = mc_generator_estimate(m, f, np.eye(3), 1e-3, 10, NoiseConfig(angular=False, translational=False))
    assert rep.mc_estimate == 0.0 and rep.analytic == 0.0 and rep.passed


def test_mc_generator_small(rng):
    m = BallModel(3, random_inertia(3, rng))
    s = random_group_point(rng, 3).matrix
    f = TestFunction(rng.standard_normal((3, 3)))
    rep = mc_generator_estimate(m, f, s, 1e-3, 20_000, seed=4)
    assert np.isfinite(rep.stderr) and rep.stderr > 0
    assert rep.passed, (rep.analytic, rep.mc_estimate, rep.stderr)


def test_mc_nh_drift_homogeneous():
    m = BallModel.homogeneous(3)
    est = mc_nh_drift(m, np.eye(3), 1e-3, 20_000, seed=2)
    assert np.abs(est.analytic).max() < 1e-12
    assert np.linalg.norm(est.estimate) <= 3 * est.stderr_norm + 10 * est.h


def test_mc_q_generator(rng):
    m = BallModel(3, random_inertia(3, rng))
    s = random_group_point(rng, 3).matrix
    f = TestFunction(rng.standard_normal((3, 3)))
    rep = mc_q_generator_estimate(m, f, s, 1e-3, 20_000, seed=6)
    assert rep.passed, (rep.analytic, rep.mc_estimate, rep.stderr)


def test_sphere_project(rng):
    n = 4
    assert np.array_equal(sphere_project(np.eye(n)), np.eye(n)[-1])
    s = random_group_point(rng, n).matrix
    h = np.eye(n)
    h[:-1, :-1] = random_group_point(rng, n - 1).matrix
    assert np.abs(sphere_project(h @ s) - sphere_project(s)).max() < 1e-12
    assert np.linalg.norm(sphere_project(s)) == pytest.approx(1.0, abs=1e-12)


def test_sphere_decay_small():
    rep = sphere_decay_test(3, 1.0, 10, 20_000, seed=1, h=1e-2)
    assert rep.predicted_rate == pytest.approx(0.5, abs=1e-12)
    assert rep.channel_rates["translational_only"] == pytest.approx(0.25, abs=1e-12)
    assert rep.r_squared > 0.9
    assert rep.passed, (rep.fitted_rate, rep.rate_stderr)


def test_sphere_decay_orthogonal_direction():
    with pytest.raises(ValueError):
        sphere_decay_test(3, 1.0, 10, 100, c=np.array([1.0, 0.0, 0.0]))


def test_orthogonal_direction_mean_stays_zero():
    """Started at the identity, E <kappa, c> for c orthogonal to e_n is zero by symmetry."""
    from chaplygin import IntegratorConfig, simulate_ensemble

    m = BallModel.homogeneous(3)
    ens = simulate_ensemble(m, np.eye(3), 0.5, IntegratorConfig(h=1e-2, path_count=20_000, master_seed=3),
                            snapshot_stride=10)
    proj = ens.snapshots[:, :, -1, 0]
    se = proj.std(axis=0, ddof=1)[1:] / np.sqrt(proj.shape[0])
    assert np.all(np.abs(proj.mean(axis=0)[1:]) <= 3 * se + 1e-3)


def test_drift_report_n3(rng):
    m = BallModel(3, random_inertia(3, rng))
    rep = drift_theorem_report(m, 10, rng)
    assert rep.column("max_mech_horiz").max() < 1e-9
    assert rep.column("max_vel_horiz").max() < 1e-8
    assert rep.column("ham_residual").max() < 1e-10
    assert rep.column("residual_opposite").max() < 1e-8
    summary = rep.summary()
    assert set(summary) >= {"residual_theorem", "max_mech_horiz", "max_vel_horiz", "ham_residual"}
    with pytest.raises(ValueError):
        drift_theorem_report(m, 0, rng)


def test_drift_report_n4_reports_velocity(rng):
    m = BallModel(4, random_inertia(4, rng))
    rep = drift_theorem_report(m, 5, rng)
    assert rep.column("max_mech_horiz").max() < 1e-9
    assert rep.column("ham_residual").min() > 1e-8
    assert np.isfinite(rep.column("max_vel_horiz")).all()


def test_step_halving_bounds_bias(rng):
    m = BallModel(3, random_inertia(3, rng))
    f = TestFunction(rng.standard_normal((3, 3)))
    rep = step_halving(m, f, np.eye(3), 0.2, 0.02, 2000, levels=3, seed=9, scheme="euler_exp")
    assert np.allclose(rep.steps, [0.02, 0.01, 0.005])
    assert np.all(np.abs(rep.diff_means) <= 3 * rep.diff_stderrs + 0.5 * rep.steps[:-1])
    with pytest.raises(ValueError):
        step_halving(m, f, np.eye(3), 0.2, 0.02, 10, levels=2)
