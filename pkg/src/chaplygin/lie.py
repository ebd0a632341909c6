"""so(n) in the adapted orthonormal basis and the group SO(n).

Coordinates are taken in the basis ``Y`` (spanning the stabilizer algebra of
``e_n``) followed by ``Z`` (its orthogonal complement), orthonormal for
``<u, v> = 1/2 tr(u^T v)``.  Every basis element is of the form
``E_ij - E_ji`` with ``i < j``, so the coordinate of a skew matrix ``M`` along
it is simply ``M[i, j]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "AlgebraVector",
    "BasisSet",
    "GroupPoint",
    "LogSafetyError",
    "Ad",
    "as_matrix",
    "bracket",
    "build_basis",
    "exp_map",
    "expm_skew",
    "inner",
    "log_map",
    "log_near_identity",
    "orth_defect",
    "random_group_point",
    "reorthonormalize",
]


class LogSafetyError(ValueError):
    """Raised when a group element is outside the principal-log safety region."""


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Adapted orthonormal basis of so(n).

    ``pairs[k] = (i, j)`` identifies basis element ``k`` with ``E_ij - E_ji``.
    ``structure[i, j, k]`` is the ``k``-th coordinate of ``[e_i, e_j]``.
    """

    n: int
    pairs: np.ndarray
    matrices: np.ndarray
    structure: np.ndarray
    k: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "m", self.n * (self.n - 1) // 2)
        object.__setattr__(self, "k", (self.n - 1) * (self.n - 2) // 2)

    @property
    def Y(self) -> list["AlgebraVector"]:
        return [AlgebraVector(np.eye(self.m)[i], self) for i in range(self.k)]

    @property
    def Z(self) -> list["AlgebraVector"]:
        return [AlgebraVector(np.eye(self.m)[i], self) for i in range(self.k, self.m)]

    @property
    def h_slice(self) -> slice:
        return slice(0, self.k)

    @property
    def hperp_slice(self) -> slice:
        return slice(self.k, self.m)

    # coordinate-level kernels, used throughout the package

    def to_matrix(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        return np.tensordot(coords, self.matrices, axes=(-1, 0))

    def to_coords(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        A = 0.5 * (M - np.swapaxes(M, -1, -2))
        return A[..., self.pairs[:, 0], self.pairs[:, 1]]

    def bracket(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("...i,...j,ijk->...k", u, v, self.structure)

    def ad(self, x: np.ndarray) -> np.ndarray:
        """Matrix of ``v -> [x, v]``."""
        return np.einsum("i,ijk->kj", x, self.structure)

    def Ad_matrix(self, s: np.ndarray) -> np.ndarray:
        """Matrix of ``u -> s u s^T`` in coordinates."""
        images = s @ self.matrices @ s.T
        return self.to_coords(images).T

    def project_h(self, coords: np.ndarray) -> np.ndarray:
        out = np.array(coords, dtype=float)
        out[..., self.k:] = 0.0
        return out

    def project_hperp(self, coords: np.ndarray) -> np.ndarray:
        out = np.array(coords, dtype=float)
        out[..., : self.k] = 0.0
        return out


@dataclass(frozen=True, eq=False)
class AlgebraVector:
    """Element of so(n) held by its coordinates in an adapted basis."""

    coords: np.ndarray
    basis: BasisSet

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.shape != (self.basis.m,):
            raise ValueError(f"expected {self.basis.m} coordinates, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_matrix(cls, M: np.ndarray, basis: BasisSet) -> "AlgebraVector":
        M = np.asarray(M, dtype=float)
        if M.shape != (basis.n, basis.n):
            raise ValueError(f"expected a {basis.n}x{basis.n} matrix, got {M.shape}")
        return cls(basis.to_coords(M), basis)

    @property
    def matrix(self) -> np.ndarray:
        return self.basis.to_matrix(self.coords)

    def _check(self, other: "AlgebraVector"):
        if other.basis.n != self.basis.n:
            raise ValueError(f"dimension mismatch: so({self.basis.n}) vs so({other.basis.n})")

    def __add__(self, other):
        self._check(other)
        return AlgebraVector(self.coords + other.coords, self.basis)

    def __sub__(self, other):
        self._check(other)
        return AlgebraVector(self.coords - other.coords, self.basis)

    def __neg__(self):
        return AlgebraVector(-self.coords, self.basis)

    def __mul__(self, c: float):
        return AlgebraVector(c * self.coords, self.basis)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


def orth_defect(s: np.ndarray) -> float:
    s = np.asarray(s)
    return float(np.linalg.norm(s.T @ s - np.eye(s.shape[0])))


@dataclass(frozen=True, eq=False)
class GroupPoint:
    """Element of SO(n); ``orth_defect`` caches ``||s^T s - 1||_F``."""

    matrix: np.ndarray
    orth_defect: float = field(init=False)

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {M.shape}")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)
        object.__setattr__(self, "orth_defect", orth_defect(M))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def inverse(self) -> "GroupPoint":
        return GroupPoint(self.matrix.T)

    def __matmul__(self, other: "GroupPoint") -> "GroupPoint":
        return GroupPoint(self.matrix @ as_matrix(other))

    @classmethod
    def identity(cls, n: int) -> "GroupPoint":
        return cls(np.eye(n))


def as_matrix(s) -> np.ndarray:
    """Accept a GroupPoint or a plain array."""
    if isinstance(s, GroupPoint):
        return s.matrix
    return np.asarray(s, dtype=float)


def build_basis(n: int) -> BasisSet:
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    pairs = [(i, j) for i, j in itertools.combinations(range(n - 1), 2)]
    pairs += [(a, n - 1) for a in range(n - 1)]
    pairs = np.array(pairs, dtype=np.intp)
    m = len(pairs)
    mats = np.zeros((m, n, n))
    for k, (i, j) in enumerate(pairs):
        mats[k, i, j] = 1.0
        mats[k, j, i] = -1.0
    comm = np.einsum("iab,jbc->ijac", mats, mats)
    comm = comm - np.swapaxes(comm, 0, 1)
    structure = 0.5 * (comm - np.swapaxes(comm, -1, -2))[..., pairs[:, 0], pairs[:, 1]]
    pairs.setflags(write=False)
    mats.setflags(write=False)
    structure.setflags(write=False)
    return BasisSet(n=n, pairs=pairs, matrices=mats, structure=structure)


def inner(u: AlgebraVector, v: AlgebraVector) -> float:
    u._check(v)
    return float(0.5 * np.sum(u.matrix * v.matrix))


def bracket(u: AlgebraVector, v: AlgebraVector) -> AlgebraVector:
    u._check(v)
    U, V = u.matrix, v.matrix
    return AlgebraVector.from_matrix(U @ V - V @ U, u.basis)


def Ad(s, u: AlgebraVector) -> AlgebraVector:
    S = as_matrix(s)
    if S.shape[0] != u.basis.n:
        raise ValueError(f"dimension mismatch: SO({S.shape[0]}) acting on so({u.basis.n})")
    return AlgebraVector.from_matrix(S @ u.matrix @ S.T, u.basis)


def expm_skew(A: np.ndarray, theta: float = 0.25, order: int = 12) -> np.ndarray:
    """Scaling-and-squaring Taylor exponential of (stacks of) small matrices.

    Each matrix in the stack gets its own number of squarings, so the result
    for one matrix does not depend on the others in the batch.
    """
    A = np.asarray(A, dtype=float)
    batch = A.shape[:-2]
    n = A.shape[-1]
    norms = np.linalg.norm(A, axis=(-2, -1))
    squarings = np.where(norms > theta, np.ceil(np.log2(np.maximum(norms, theta) / theta)), 0)
    squarings = squarings.astype(int)
    X = A / (2.0 ** squarings)[..., None, None]
    eye = np.broadcast_to(np.eye(n), batch + (n, n))
    # Horner form of the truncated series
    E = eye + X / order
    for j in range(order - 1, 0, -1):
        E = eye + (X @ E) / j
    top = int(squarings.max()) if squarings.size else 0
    for r in range(top):
        sq = E @ E
        if batch:
            E = np.where((squarings > r)[..., None, None], sq, E)
        else:
            E = sq
    return E


def exp_map(u: AlgebraVector) -> GroupPoint:
    return GroupPoint(expm_skew(u.matrix))


def log_map(s, basis: BasisSet | None = None) -> AlgebraVector:
    """Principal logarithm, restricted to ``||s - 1||_2 < 1``."""
    S = as_matrix(s)
    n = S.shape[0]
    dist = np.linalg.norm(S - np.eye(n), 2)
    if not dist < 1.0:
        raise LogSafetyError(f"||s - 1||_2 = {dist:.3g} is outside the log safety region (< 1)")
    basis = basis or build_basis(n)
    L = scipy.linalg.logm(S)
    return AlgebraVector.from_matrix(np.real(L), basis)


def log_near_identity(R: np.ndarray, tol: float = 1e-17, max_terms: int = 400) -> np.ndarray:
    """Batched principal log of matrices with ``||R - 1||_2 < 1`` via the
    Mercator series; raises :class:`LogSafetyError` outside that region."""
    R = np.asarray(R, dtype=float)
    X = R - np.eye(R.shape[-1])
    dist = np.linalg.norm(X, ord=2, axis=(-2, -1))
    if np.any(dist >= 1.0):
        raise LogSafetyError(f"max ||R - 1||_2 = {dist.max():.3g} is outside the log safety region (< 1)")
    L = np.zeros_like(X)
    term = np.broadcast_to(np.eye(R.shape[-1]), X.shape).copy()
    for k in range(1, max_terms + 1):
        term = term @ X
        L += ((-1) ** (k + 1) / k) * term
        if np.abs(term).max() / k < tol:
            break
    return L


def reorthonormalize(s) -> GroupPoint:
    """Nearest rotation in Frobenius norm (polar factor, determinant +1)."""
    S = as_matrix(s)
    U, _, Vt = np.linalg.svd(S)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return GroupPoint(R)


def random_group_point(rng: np.random.Generator, n: int) -> GroupPoint:
    """Haar-distributed rotation from the QR factorization of a Gaussian matrix."""
    G = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return GroupPoint(Q)
