"""Statistical verification layer: analytic generator, Monte-Carlo estimates,
the sphere decay test for the homogeneous ball, and drift reports.

Monte-Carlo comparisons are all of the form
``|estimate - oracle| <= 3 * stderr + bias budget``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ball import BallModel
from .geometry import (
    TestFunction,
    _nabla_nh_point,
    drift_vector,
    field_apply_twice,
    hessian_nh,
    inertia_field,
    zeta_field,
)
from . import kernels
from .lie import as_matrix, log_near_identity, random_group_point
from .sde import (
    SCHEMES,
    StepRejected,
    IntegratorConfig,
    NoiseConfig,
    QState,
    _mask,
    _scaled_fields,
    draw_increments,
    nh_vector_fields,
    simulate_ensemble,
    simulate_q_ensemble,
)

__all__ = [
    "DriftTheoremReport",
    "GeneratorReport",
    "SphereTestReport",
    "apply_generator",
    "drift_theorem_report",
    "generator_drift_split",
    "mc_generator_estimate",
    "mc_nh_drift",
    "mc_q_generator_estimate",
    "q_generator",
    "sphere_decay_test",
    "sphere_project",
    "step_halving",
]

BIAS_FRACTION = 0.1


@dataclass
class GeneratorReport:
    point: np.ndarray
    f: TestFunction
    analytic: float
    mc_estimate: float
    stderr: float
    h: float
    paths: int

    def __post_init__(self):
        if self.paths < 2:
            raise ValueError("need at least two paths for a standard error")

    @property
    def tolerance(self) -> float:
        return 3 * self.stderr + BIAS_FRACTION * abs(self.analytic)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.stderr)) and abs(self.mc_estimate - self.analytic) <= self.tolerance


def apply_generator(model: BallModel, f: TestFunction, s, noise: NoiseConfig = NoiseConfig()) -> float:
    """``A f(s) = V0.f + 1/2 sum_i W_i W_i f + 1/2 sum_a U_a U_a f`` over the
    active channels; all field derivatives are analytic."""
    P = model.at(as_matrix(s))
    total = 0.0
    if noise.drift_active:
        V0 = -0.5 * P.solve(model.gram @ model.sum_nabla_I)
        total += f.d(model, P.s, V0)
    if noise.angular:
        total += 0.5 * sum(field_apply_twice(model, P, f, inertia_field(i)) for i in range(model.m))
    if noise.translational:
        total += 0.5 * sum(field_apply_twice(model, P, f, zeta_field(a, -1.0)) for a in range(model.n - 1))
    return float(total)


def generator_drift_split(model: BallModel, f: TestFunction, s) -> float:
    """Full-noise generator regrouped as ``drift.f + 1/2 sum Hess^nh(f)(Y, Y)``."""
    S = as_matrix(s)
    total = f.d(model, S, drift_vector(model, S))
    for i in range(model.m):
        W = inertia_field(i)
        total += 0.5 * hessian_nh(model, S, f, W, W)
    for a in range(model.n - 1):
        U = zeta_field(a, -1.0)
        total += 0.5 * hessian_nh(model, S, f, U, U)
    return float(total)


def mc_generator_estimate(model: BallModel, f: TestFunction, s0, h: float, paths: int,
                          noise: NoiseConfig = NoiseConfig(), seed: int = 0, scheme: str = "heun_exp",
                          workers: int = 1, backend: str | None = None) -> GeneratorReport:
    """``(E f(Gamma_h) - f(s0)) / h`` from ``paths`` one-step samples."""
    S0 = as_matrix(s0)
    analytic = apply_generator(model, f, S0, noise)
    if not noise.stochastic and not noise.drift_active:
        return GeneratorReport(S0, f, analytic, 0.0, 0.0, h, paths)
    cfg = IntegratorConfig(h=h, scheme=scheme, master_seed=seed, path_count=paths)
    ens = simulate_ensemble(model, S0, h, cfg, noise, workers=workers, backend=backend)
    vals = (np.einsum("ij,pij->p", f.C, ens.terminal) - f(S0)) / h
    return GeneratorReport(S0, f, analytic, float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(paths)), h, paths)


@dataclass
class HalvingReport:
    steps: np.ndarray
    means: np.ndarray
    diff_means: np.ndarray
    diff_stderrs: np.ndarray

    @property
    def slope(self) -> float:
        """Observed weak order from successive coupled differences."""
        d = np.abs(self.diff_means)
        return float(np.mean(np.log2(d[:-1] / d[1:])))


def step_halving(model: BallModel, f: TestFunction, s0, T: float, h: float, paths: int, levels: int = 3,
                 noise: NoiseConfig = NoiseConfig(), seed: int = 0, scheme: str = "heun_exp",
                 backend: str | None = None) -> HalvingReport:
    """``E f(Gamma_T)`` at steps ``h, h/2, ...`` driven by the same Brownian paths.

    Increments are drawn on the finest grid and summed pairwise for the
    coarser ones, so differences between levels carry little sampling noise
    and expose the discretization bias.
    """
    if levels < 3:
        raise ValueError("need at least three levels for a slope")
    S0 = as_matrix(s0)
    fine_h = h / 2 ** (levels - 1)
    fine_steps = int(round(T / fine_h))
    if fine_steps % 2 ** (levels - 1):
        raise ValueError("T / h must be an integer")
    incr = _mask(draw_increments(seed, range(paths), fine_steps, model.m + model.n - 1, fine_h), model, noise)
    gv, gw0 = _scaled_fields(model)
    vals, steps = [], []
    for lev in range(levels):
        group = 2 ** (levels - 1 - lev)
        inc = incr.reshape(paths, fine_steps // group, group, -1).sum(axis=2)
        out, _, status = kernels.integrate_nh(
            np.broadcast_to(S0, (paths,) + S0.shape), inc, model.gram, gv, gw0, model.basis.pairs,
            fine_h * group, noise.drift_active, SCHEMES[scheme], 100, inc.shape[1], backend=backend)
        if status.any():
            bad = int(np.flatnonzero(status)[0])
            raise StepRejected(bad, int(status[bad]))
        vals.append(np.einsum("ij,pij->p", f.C, out))
        steps.append(fine_h * group)
    vals = np.array(vals)
    diffs = vals[:-1] - vals[1:]
    return HalvingReport(np.array(steps), vals.mean(axis=1), diffs.mean(axis=1),
                         diffs.std(axis=1, ddof=1) / np.sqrt(paths))


@dataclass
class NHDriftEstimate:
    estimate: np.ndarray
    stderr: np.ndarray
    analytic: np.ndarray
    h: float
    paths: int

    @property
    def stderr_norm(self) -> float:
        return float(np.linalg.norm(self.stderr))


def mc_nh_drift(model: BallModel, s0, h: float, paths: int, noise: NoiseConfig = NoiseConfig(), seed: int = 0,
                workers: int = 1, backend: str | None = None) -> NHDriftEstimate:
    """Monte-Carlo drift of one step measured against ``nabla^nh``.

    ``E[log(s0^-1 Gamma_h)] / h`` is the drift in exponential coordinates; adding
    ``1/2 sum Gamma(Y, Y)`` over the noise fields, with ``Gamma`` the
    connection on left-invariant arguments, converts it to the ``nabla^nh``
    drift.
    """
    S0 = as_matrix(s0)
    cfg = IntegratorConfig(h=h, master_seed=seed, path_count=paths)
    ens = simulate_ensemble(model, S0, h, cfg, noise, workers=workers, backend=backend)
    incr = model.basis.to_coords(log_near_identity(S0.T @ ens.terminal)) / h
    P = model.at(S0)
    _, V, U = nh_vector_fields(model, S0)
    corr = np.zeros(model.m)
    if noise.angular:
        corr += 0.5 * sum(_nabla_nh_point(model, P, v, v) for v in V)
    if noise.translational:
        corr += 0.5 * sum(_nabla_nh_point(model, P, u, u) for u in U)
    est = incr.mean(axis=0) + corr
    se = incr.std(axis=0, ddof=1) / np.sqrt(paths)
    return NHDriftEstimate(est, se, drift_vector(model, S0), h, paths)


# Brownian motion on Q


def q_generator(model: BallModel, f: TestFunction, s) -> float:
    """``1/2 sum_i (v_i v_i - nabla^I_{v_i} v_i) f``, half the Laplacian of ``<I., .>``."""
    S = as_matrix(s)
    second = sum(f.dd(model, S, v, v) for v in model.v_frame.T)
    return float(0.5 * second - 0.5 * f.d(model, S, model.sum_nabla_I))


def mc_q_generator_estimate(model: BallModel, f: TestFunction, s0, h: float, paths: int, seed: int = 0) -> GeneratorReport:
    S0 = as_matrix(s0)
    cfg = IntegratorConfig(h=h, master_seed=seed, path_count=paths)
    ens = simulate_q_ensemble(model, QState(S0, np.zeros(model.n - 1)), h, cfg)
    vals = (np.einsum("ij,pij->p", f.C, ens.terminal_s) - f(S0)) / h
    return GeneratorReport(S0, f, q_generator(model, f, S0), float(vals.mean()),
                           float(vals.std(ddof=1) / np.sqrt(paths)), h, paths)


# sphere projection for the homogeneous ball


def sphere_project(s) -> np.ndarray:
    """``s^T e_n``; constant on cosets ``H s``."""
    S = as_matrix(s)
    return S[..., -1, :].copy()


@dataclass
class SphereTestReport:
    c: np.ndarray
    times: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    fitted_rate: float
    predicted_rate: float
    rate_stderr: float
    r_squared: float
    noise: NoiseConfig
    channel_rates: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if abs(np.linalg.norm(self.c) - 1) > 1e-12:
            raise ValueError("direction c must be a unit vector")

    @property
    def tolerance(self) -> float:
        return 3 * self.rate_stderr + BIAS_FRACTION * abs(self.predicted_rate)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rate_stderr)) and abs(self.fitted_rate - self.predicted_rate) <= self.tolerance


class FitRejected(RuntimeError):
    pass


def _fit_decay(times, means, stderrs):
    """Weighted least squares of ``log mean = a - r t``; delta-method weights."""
    y = np.log(means)
    sy = stderrs / means
    w = 1.0 / sy**2
    X = np.column_stack([np.ones_like(times), -times])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    resid = y - X @ beta
    ybar = np.average(y, weights=w)
    r2 = 1.0 - np.sum(w * resid**2) / np.sum(w * (y - ybar) ** 2)
    return float(beta[1]), float(np.sqrt(cov[1, 1])), float(r2)


def sphere_decay_test(n: int, T: float, steps: int, paths: int, noise: NoiseConfig = NoiseConfig(), seed: int = 0,
                      h: float = 1e-2, c=None, s0=None, workers: int = 1,
                      backend: str | None = None) -> SphereTestReport:
    """Decay of ``E <kappa(Gamma_t), c>`` for the homogeneous ball.

    ``steps`` is the number of grid intervals on ``[0, T]``.  Degree-1
    functions are eigenfunctions of the sphere Laplacian, so the predicted
    rate is ``-A f_c / f_c`` from :func:`apply_generator`.
    """
    model = BallModel.homogeneous(n)
    S0 = np.eye(n) if s0 is None else as_matrix(s0)
    c = sphere_project(S0) if c is None else np.asarray(c, dtype=float)
    f = TestFunction.sphere_coordinate(c)
    f0 = f(S0)
    if abs(f0) < 1e-8:
        raise ValueError("c is orthogonal to kappa(s0); the decay rate is undefined")
    predicted = -apply_generator(model, f, S0, noise) / f0
    rates = {
        name: -apply_generator(model, f, S0, nz) / f0
        for name, nz in [
            ("full", NoiseConfig()),
            ("angular_only", NoiseConfig(translational=False)),
            ("translational_only", NoiseConfig(angular=False)),
        ]
    }
    total_steps = int(round(T / h))
    if total_steps % steps:
        raise ValueError(f"grid of {steps} intervals does not divide {total_steps} steps")
    cfg = IntegratorConfig(h=h, master_seed=seed, path_count=paths)
    ens = simulate_ensemble(model, S0, T, cfg, noise, workers=workers,
                            snapshot_stride=total_steps // steps, backend=backend)
    proj = ens.snapshots[:, :, -1, :] @ c
    means = proj.mean(axis=0)
    stderrs = proj.std(axis=0, ddof=1) / np.sqrt(paths)
    times = ens.times
    # t = 0 has no sampling error; fit on the random part of the grid
    mask = times > 0
    if np.any(means[mask] <= 0):
        raise FitRejected("non-positive mean on the grid; increase paths or shorten T")
    rate, se, r2 = _fit_decay(times[mask], means[mask] / f0, stderrs[mask] / abs(f0))
    if r2 < 0.9:
        raise FitRejected(f"decay fit R^2 = {r2:.3f} < 0.9; increase paths")
    return SphereTestReport(c, times, means, stderrs, rate, predicted, se, r2, noise, rates)


# drift theorem report


@dataclass
class DriftTheoremReport:
    rows: list[dict]

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def summary(self) -> dict:
        keys = [k for k in self.rows[0] if k != "sample_id"]
        return {k: {"max": float(self.column(k).max()), "mean": float(self.column(k).mean())} for k in keys}


def drift_theorem_report(model: BallModel, samples: int, rng: np.random.Generator) -> DriftTheoremReport:
    """Per random point: the drift-gradient residual in both orientations,
    mechanical and velocity horizontality, and the Hamiltonization residual."""
    if samples < 1:
        raise ValueError("need at least one sample")
    rows = []
    for i in range(samples):
        s = random_group_point(rng, model.n).matrix
        P = model.at(s)
        d = drift_vector(model, s)
        g = P.grad_logN()
        xi = model.xi_all(s)
        rows.append({
            "sample_id": i,
            "residual_theorem": float(np.linalg.norm(d + 0.5 * g)),
            "residual_opposite": float(np.linalg.norm(d - 0.5 * g)),
            "max_mech_horiz": float(np.abs(xi @ (P.mu0 @ d)).max()) if model.k else 0.0,
            "max_vel_horiz": float(np.abs(xi @ d).max()) if model.k else 0.0,
            "ham_residual": model.ham_condition_residual(s),
        })
    return DriftTheoremReport(rows)
