"""Chaplygin ball data on K = SO(n): inertia, moving frames, the compressed
metric ``mu0 = I + A*A`` and its preserved density.

Algebra elements are coordinate vectors (length ``m``) in the adapted basis
of :mod:`chaplygin.lie`; group points are ``n x n`` arrays or
:class:`~chaplygin.lie.GroupPoint`.  Since the basis is orthonormal,
``<u, v>`` is the dot product of coordinates and ``A*A(s)`` is the
orthogonal projector ``zeta(s)^T zeta(s)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lie import BasisSet, as_matrix, build_basis

__all__ = [
    "BallModel",
    "InertiaOperator",
    "MetricAtPoint",
    "identity_inertia",
    "physical_inertia",
    "random_inertia",
]


@dataclass(frozen=True, eq=False)
class InertiaOperator:
    """Symmetric positive-definite inertia ``I`` in the adapted basis."""

    gram: np.ndarray

    def __post_init__(self):
        G = np.array(self.gram, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"inertia gram must be square, got {G.shape}")
        if np.linalg.norm(G - G.T) > 1e-12 * max(1.0, np.linalg.norm(G)):
            raise ValueError("inertia gram is not symmetric")
        if np.linalg.eigvalsh(G).min() <= 0:
            raise ValueError("inertia gram is not positive definite")
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        object.__setattr__(self, "gram", G)

    @property
    def m(self) -> int:
        return self.gram.shape[0]


def identity_inertia(n: int) -> InertiaOperator:
    m = n * (n - 1) // 2
    return InertiaOperator(np.eye(m))


def physical_inertia(n: int, masses) -> InertiaOperator:
    """Inertia ``u -> L u + u L`` with ``L = diag(masses)``."""
    lam = np.asarray(masses, dtype=float)
    if lam.shape != (n,):
        raise ValueError(f"expected {n} masses, got shape {lam.shape}")
    if np.any(lam <= 0):
        raise ValueError("masses must be positive")
    basis = build_basis(n)
    L = np.diag(lam)
    images = L @ basis.matrices + basis.matrices @ L
    return InertiaOperator(basis.to_coords(images).T)


def random_inertia(n: int, rng: np.random.Generator, low: float = 0.5, high: float = 5.0) -> InertiaOperator:
    """``Q D Q^T`` with Haar ``Q`` and log-uniform eigenvalues in ``[low, high]``."""
    m = n * (n - 1) // 2
    X = rng.standard_normal((m, m))
    Q, R = np.linalg.qr(X)
    Q = Q * np.sign(np.diag(R))
    d = np.exp(rng.uniform(np.log(low), np.log(high), size=m))
    return InertiaOperator((Q * d) @ Q.T)


@dataclass(frozen=True, eq=False)
class BallModel:
    """Immutable bundle of everything that does not depend on the point ``s``.

    ``v_frame`` holds the ``<I., .>``-orthonormal frame as columns and
    ``sum_nabla_I`` caches ``sum_i nabla^I_{v_i} v_i``.
    """

    n: int
    inertia: InertiaOperator
    v_frame: np.ndarray | None = None
    basis: BasisSet = field(init=False)
    gram_inv: np.ndarray = field(init=False)
    sum_nabla_I: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"n must be >= 3, got {self.n}")
        basis = build_basis(self.n)
        G = self.inertia.gram
        if G.shape != (basis.m, basis.m):
            raise ValueError(f"inertia must be {basis.m}x{basis.m} for n={self.n}, got {G.shape}")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "gram_inv", np.linalg.inv(G))
        if self.v_frame is None:
            L = np.linalg.cholesky(G)
            V = scipy.linalg.solve_triangular(L, np.eye(basis.m), lower=True).T
        else:
            V = np.array(self.v_frame, dtype=float)
            if np.abs(V.T @ G @ V - np.eye(basis.m)).max() > 1e-10:
                raise ValueError("v_frame is not orthonormal for <I., .>")
        V.setflags(write=False)
        object.__setattr__(self, "v_frame", V)
        object.__setattr__(self, "sum_nabla_I", self.compute_sum_nabla_I())

    @classmethod
    def homogeneous(cls, n: int) -> "BallModel":
        return cls(n, identity_inertia(n))

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def gram(self) -> np.ndarray:
        return self.inertia.gram

    def with_frame_rotation(self, R: np.ndarray) -> "BallModel":
        """Same ball with the frame ``v_i`` replaced by ``sum_j v_j R_ji``."""
        return BallModel(self.n, self.inertia, self.v_frame @ R)

    # left-invariant pieces

    def nabla_I(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Levi-Civita connection of ``<I., .>`` on left-invariant fields."""
        G, br = self.gram, self.basis.bracket
        return 0.5 * br(u, v) + 0.5 * self.gram_inv @ (br(u, G @ v) + br(v, G @ u))

    def compute_sum_nabla_I(self) -> np.ndarray:
        V = self.v_frame.T
        return np.sum([self.nabla_I(v, v) for v in V], axis=0)

    def h0(self, s, u: np.ndarray) -> float:
        return float(-0.5 * (self.gram @ u) @ self.sum_nabla_I)

    def h_i(self, s, u: np.ndarray) -> np.ndarray:
        return self.v_frame.T @ (self.gram @ u)

    def f_a(self, s, u: np.ndarray) -> np.ndarray:
        return -(self.zeta_all(s) @ u)

    # right-invariant frames

    def zeta_all(self, s) -> np.ndarray:
        """Rows ``zeta_a(s) = Ad(s^-1) Z_a``, shape ``(n-1, m)``."""
        S = as_matrix(s)
        r = S[: self.n - 1]  # rows e_a^T s
        rn = S[self.n - 1]
        i, j = self.basis.pairs[:, 0], self.basis.pairs[:, 1]
        return r[:, i] * rn[j] - rn[i] * r[:, j]

    def xi_all(self, s) -> np.ndarray:
        """Rows ``xi_alpha(s) = Ad(s^-1) Y_alpha``, shape ``(k, m)``."""
        R = self.basis.Ad_matrix(as_matrix(s).T)
        return R[:, : self.k].T

    def zeta(self, s, a: int) -> np.ndarray:
        if not 1 <= a <= self.n - 1:
            raise IndexError(f"zeta index {a} outside 1..{self.n - 1}")
        return self.zeta_all(s)[a - 1]

    def xi(self, s, alpha: int) -> np.ndarray:
        if not 1 <= alpha <= self.k:
            raise IndexError(f"xi index {alpha} outside 1..{self.k}")
        return self.xi_all(s)[alpha - 1]

    def astar_a(self, s, u: np.ndarray) -> np.ndarray:
        z = self.zeta_all(s)
        return z.T @ (z @ u)

    # the compressed metric

    def at(self, s) -> "MetricAtPoint":
        return MetricAtPoint(self, as_matrix(s))

    def mu0_matrix(self, s) -> np.ndarray:
        return self.at(s).mu0

    def mu0_apply(self, s, u: np.ndarray) -> np.ndarray:
        return self.at(s).mu0 @ u

    def mu0_inv_apply(self, s, u: np.ndarray) -> np.ndarray:
        return self.at(s).solve(u)

    def density_N(self, s) -> float:
        return self.at(s).density_N()

    def log_density_N(self, s) -> float:
        return self.at(s).log_density_N()

    def dlogN_coeffs(self, s) -> np.ndarray:
        return self.at(s).dlogN_coeffs()

    def dlogN_coeffs_recorded(self, s) -> np.ndarray:
        return self.at(s).dlogN_coeffs_recorded()

    def grad_logN(self, s) -> np.ndarray:
        return self.at(s).grad_logN()

    def momentum_JH(self, s, u: np.ndarray) -> np.ndarray:
        return self.xi_all(s) @ (self.gram @ u)

    def left_derivative_mu0(self, s, X: np.ndarray) -> np.ndarray:
        return self.at(s).d_mu0(X)

    def left_derivative_mu0_inv(self, s, X: np.ndarray) -> np.ndarray:
        return self.at(s).d_mu0_inv(X)

    def ham_condition_residual(self, s=None) -> float:
        """Largest violation of the Hamiltonization condition at ``s``.

        Defaults to the identity.  The condition is an identity for ``n = 3``.
        """
        S = np.eye(self.n) if s is None else as_matrix(s)
        P = self.at(S)
        z = P.zeta
        w = P.solve(z.T).T  # mu0^-1 zeta_a as rows
        br = self.basis.structure
        # B[b, c] = [zeta_b, zeta_c]
        B = np.einsum("bi,cj,ijk->bck", z, z, br)
        lhs = (self.n - 2) * np.einsum("dk,bck->bcd", w, B)
        # t[b] = sum_a <mu0^-1 zeta_a, [zeta_b, zeta_a]>
        t = np.einsum("ak,bak->b", w, B)
        eye = np.eye(self.n - 1)
        rhs = t[:, None, None] * eye[None, :, :] - t[None, :, None] * eye[:, None, :]
        return float(np.abs(lhs - rhs).max())


class MetricAtPoint:
    """Point-local evaluation of ``mu0(s)`` with a single Cholesky factorization.

    Created per call; nothing is memoized across points.
    """

    def __init__(self, model: BallModel, s: np.ndarray):
        self.model = model
        self.s = s
        self.zeta = model.zeta_all(s)
        self.P = self.zeta.T @ self.zeta
        self.mu0 = model.gram + self.P
        try:
            self._cho = scipy.linalg.cho_factor(self.mu0, lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("mu0 is not positive definite; inertia must be SPD") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._cho, rhs)

    def log_density_N(self) -> float:
        return float(-np.sum(np.log(np.diag(self._cho[0]))))

    def density_N(self) -> float:
        return float(np.exp(self.log_density_N()))

    def dlogN_coeffs(self) -> np.ndarray:
        """Coefficients ``c_b`` of ``d log N = sum_b c_b eta^b``.

        ``c_b = sum_a <[zeta_a, mu0^-1 zeta_a], zeta_b>``; checked against
        finite differences of ``log N`` in the tests.
        """
        return -self.dlogN_coeffs_recorded()

    def dlogN_coeffs_recorded(self) -> np.ndarray:
        """``sum_a <[mu0^-1 zeta_a, zeta_a], zeta_b>``, the opposite orientation."""
        w = self.solve(self.zeta.T).T
        br = self.model.basis.bracket(w, self.zeta).sum(axis=0)
        return self.zeta @ br

    def grad_logN(self) -> np.ndarray:
        return self.solve(self.zeta.T @ self.dlogN_coeffs())

    def d_mu0(self, X: np.ndarray) -> np.ndarray:
        """Matrix of ``u -> A*A[X, u] - [X, A*A u]``, the derivative of ``mu0``
        along the left-invariant direction ``X``."""
        A = self.model.basis.ad(X)
        return self.P @ A - A @ self.P

    def d_mu0_inv(self, X: np.ndarray) -> np.ndarray:
        D = self.d_mu0(X)
        return -self.solve(self.solve(D).T).T
