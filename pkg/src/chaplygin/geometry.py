"""Connections on SO(n) for the compressed ball, the drift of the projected
diffusion, and the compressed deterministic flow.

Vector fields on K are left-trivialized: a field is a map ``s -> coords``.
The derivative of such a map along a left-invariant direction ``X`` is
``d/dt field(s exp(tX))`` at ``t = 0``; for the right-invariant frames this is
``D_X zeta_a = [zeta_a, X]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ball import BallModel, MetricAtPoint
from .lie import LogSafetyError, as_matrix, expm_skew

__all__ = [
    "Field",
    "FlowResult",
    "TestFunction",
    "constant_field",
    "deterministic_flow",
    "drift_vector",
    "drift_vector_angular",
    "finite_difference_derivative",
    "hessian_nh",
    "inertia_field",
    "nabla_I",
    "nabla_nh",
    "nabla_nh_field",
    "torsion_nh",
    "verify_identity_e0",
    "verify_identity_e1",
    "verify_identity_e2",
    "zeta_field",
]

FD_STEP = 1e-5


@dataclass(frozen=True)
class Field:
    """Left-trivialized vector field with its analytic left derivative.

    ``value(model, P)`` and ``deriv(model, P, X)`` receive a
    :class:`MetricAtPoint` so one factorization of ``mu0`` serves both.
    """

    value: Callable[[BallModel, MetricAtPoint], np.ndarray]
    deriv: Callable[[BallModel, MetricAtPoint, np.ndarray], np.ndarray]
    name: str = "field"

    def __call__(self, model: BallModel, s) -> np.ndarray:
        return self.value(model, model.at(as_matrix(s)))


def constant_field(v: np.ndarray) -> Field:
    v = np.asarray(v, dtype=float)
    return Field(lambda model, P: v, lambda model, P, X: np.zeros_like(v), "constant")


def inertia_field(i: int) -> Field:
    """``W_i(s) = mu0(s)^-1 I v_i`` (0-based frame index)."""

    def value(model, P):
        return P.solve(model.gram @ model.v_frame[:, i])

    def deriv(model, P, X):
        return P.d_mu0_inv(X) @ (model.gram @ model.v_frame[:, i])

    return Field(value, deriv, f"W_{i + 1}")


def zeta_field(a: int, sign: float = 1.0) -> Field:
    """``U_a(s) = sign * mu0(s)^-1 zeta_a(s)`` (0-based index)."""

    def value(model, P):
        return sign * P.solve(P.zeta[a])

    def deriv(model, P, X):
        z = P.zeta[a]
        dz = model.basis.bracket(z, X)
        return sign * (P.d_mu0_inv(X) @ z + P.solve(dz))

    return Field(value, deriv, f"U_{a + 1}")


def finite_difference_derivative(model: BallModel, field: Field, s, X: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central difference of ``field`` along ``s exp(tX)``; cross-check mode."""
    S = as_matrix(s)
    E = expm_skew(h * model.basis.to_matrix(X))
    return (field(model, S @ E) - field(model, S @ E.T)) / (2 * h)


def nabla_I(model: BallModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return model.nabla_I(u, v)


def _nabla_nh_point(model: BallModel, P: MetricAtPoint, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    uv = model.basis.bracket(u, v)
    return P.solve(model.gram @ model.nabla_I(u, v) + P.P @ uv)


def nabla_nh(model: BallModel, s, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Non-holonomic connection on left-invariant ``u, v`` at ``s``."""
    return _nabla_nh_point(model, model.at(s), u, v)


def torsion_nh(model: BallModel, s, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    P = model.at(s)
    return P.solve(P.P @ model.basis.bracket(u, v))


def _nabla_nh_field_point(model, P, X, field: Field, derivative: str = "analytic") -> np.ndarray:
    if derivative == "analytic":
        dY = field.deriv(model, P, X)
    elif derivative == "fd":
        dY = finite_difference_derivative(model, field, P.s, X)
    else:
        raise ValueError(f"unknown derivative mode {derivative!r}")
    return dY + _nabla_nh_point(model, P, X, field.value(model, P))


def nabla_nh_field(model: BallModel, s, X: np.ndarray, field: Field, derivative: str = "analytic") -> np.ndarray:
    """``nabla^nh_X Y`` for a non-invariant field ``Y`` (Leibniz expansion in
    the left-invariant frame)."""
    return _nabla_nh_field_point(model, model.at(s), X, field, derivative)


def _self_nabla_sums(model: BallModel, P: MetricAtPoint, derivative: str = "analytic"):
    """``sum_i nabla_{W_i} W_i`` and ``sum_a nabla_{U_a} U_a``."""
    sw = np.zeros(model.m)
    for i in range(model.m):
        f = inertia_field(i)
        sw += _nabla_nh_field_point(model, P, f.value(model, P), f, derivative)
    su = np.zeros(model.m)
    for a in range(model.n - 1):
        f = zeta_field(a)
        su += _nabla_nh_field_point(model, P, f.value(model, P), f, derivative)
    return sw, su


def drift_vector(model: BallModel, s, derivative: str = "analytic") -> np.ndarray:
    """First-order part of the projected diffusion's generator, measured
    against the non-holonomic connection (full noise)."""
    P = model.at(s)
    sw, su = _self_nabla_sums(model, P, derivative)
    v0 = -0.5 * P.solve(model.gram @ model.sum_nabla_I)
    return v0 + 0.5 * sw + 0.5 * su


def drift_vector_angular(model: BallModel, s) -> np.ndarray:
    """Drift with the translational channel switched off."""
    P = model.at(s)
    sw, _ = _self_nabla_sums(model, P)
    return -0.5 * P.solve(model.gram @ model.sum_nabla_I) + 0.5 * sw


def verify_identity_e0(model: BallModel, s) -> float:
    P = model.at(s)
    sw, su = _self_nabla_sums(model, P)
    lhs = -P.solve(model.gram @ model.sum_nabla_I) + sw + su
    return float(np.linalg.norm(lhs + P.grad_logN()))


def verify_identity_e1(model: BallModel, s) -> float:
    P = model.at(s)
    sw, _ = _self_nabla_sums(model, P)
    r = sw - P.solve(model.gram @ model.sum_nabla_I) + P.grad_logN()
    return float(np.linalg.norm(r))


def verify_identity_e2(model: BallModel, s) -> float:
    P = model.at(s)
    _, su = _self_nabla_sums(model, P)
    return float(np.linalg.norm(su))


@dataclass(frozen=True)
class TestFunction:
    """``f(s) = tr(C^T s)``."""

    __test__ = False  # not a pytest class

    C: np.ndarray

    def __call__(self, s) -> float:
        return float(np.sum(self.C * as_matrix(s)))

    def d(self, model: BallModel, s, w: np.ndarray) -> float:
        """Derivative along the tangent vector ``s w``."""
        S = as_matrix(s)
        return float(np.sum(self.C * (S @ model.basis.to_matrix(w))))

    def dd(self, model: BallModel, s, w1: np.ndarray, w2: np.ndarray) -> float:
        """``w1.(w2.f)`` for left-invariant ``w1, w2``."""
        S = as_matrix(s)
        to = model.basis.to_matrix
        return float(np.sum(self.C * (S @ to(w1) @ to(w2))))

    @classmethod
    def sphere_coordinate(cls, c: np.ndarray) -> "TestFunction":
        """``f_c(s) = <s^T e_n, c>``, the pullback of a linear function on the sphere."""
        c = np.asarray(c, dtype=float)
        n = c.shape[0]
        C = np.zeros((n, n))
        C[n - 1] = c
        return cls(C)


def field_apply_twice(model: BallModel, P: MetricAtPoint, f: TestFunction, field: Field) -> float:
    """``Y.(Y.f)`` for a non-invariant field ``Y``."""
    y = field.value(model, P)
    dy = field.deriv(model, P, y)
    return f.dd(model, P.s, y, y) + f.d(model, P.s, dy)


def hessian_nh(model: BallModel, s, f: TestFunction, X: Field, Y: Field) -> float:
    """``X.(Y.f) - (nabla^nh_X Y).f``."""
    P = model.at(s)
    x, y = X.value(model, P), Y.value(model, P)
    xy = f.dd(model, P.s, x, y) + f.d(model, P.s, Y.deriv(model, P, x))
    return xy - f.d(model, P.s, _nabla_nh_field_point(model, P, x, Y))


# deterministic compressed flow


@dataclass
class FlowResult:
    t: np.ndarray
    s: np.ndarray
    u: np.ndarray
    energy: np.ndarray
    JH: np.ndarray


def _dexpinv(br, sigma, x):
    # inverse right-trivialized dexp, truncated at the order needed for RK4
    c1 = br(sigma, x)
    return x + 0.5 * c1 + br(sigma, c1) / 12.0


def _velocity_rhs(model: BallModel, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    P = model.at(s)
    return -P.solve(model.basis.bracket(u, model.gram @ u))


def deterministic_flow(model: BallModel, s0, u0: np.ndarray, T: float, h: float, record_every: int = 1) -> FlowResult:
    """Integrate ``s' = s u``, ``u' = -mu0^-1 [u, I u]`` with a 4th-order
    Runge-Kutta-Munthe-Kaas scheme; the group is updated by ``s exp(sigma)``."""
    if h <= 0:
        raise ValueError("step size must be positive")
    br = model.basis.bracket
    to = model.basis.to_matrix
    s = as_matrix(s0).copy()
    u = np.asarray(u0, dtype=float).copy()
    steps = int(round(T / h))

    def record(step):
        P = model.at(s)
        ts.append(step * h)
        ss.append(s.copy())
        us.append(u.copy())
        es.append(0.5 * u @ P.mu0 @ u)
        js.append(model.momentum_JH(s, u))

    ts, ss, us, es, js = [], [], [], [], []
    record(0)
    a = ((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0))
    b = (1 / 6, 1 / 3, 1 / 3, 1 / 6)
    for step in range(1, steps + 1):
        K, L = [], []
        for coeffs in a:
            sigma = sum((c * k for c, k in zip(coeffs, K)), np.zeros_like(u))
            ui = u + sum((c * l for c, l in zip(coeffs, L)), np.zeros_like(u))
            si = s @ expm_skew(to(sigma))
            K.append(h * _dexpinv(br, sigma, ui))
            L.append(h * _velocity_rhs(model, si, ui))
        sigma = sum(bi * k for bi, k in zip(b, K))
        if np.linalg.norm(to(sigma), 2) >= np.pi / 3:
            raise LogSafetyError(f"group increment too large at step {step}; reduce h")
        s = s @ expm_skew(to(sigma))
        u = u + sum(bi * l for bi, l in zip(b, L))
        if step % record_every == 0 or step == steps:
            record(step)
    return FlowResult(np.array(ts), np.array(ss), np.array(us), np.array(es), np.array(js))
