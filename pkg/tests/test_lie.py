import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chaplygin.lie import (
    Ad,
    AlgebraVector,
    GroupPoint,
    LogSafetyError,
    bracket,
    build_basis,
    exp_map,
    expm_skew,
    inner,
    log_map,
    log_near_identity,
    orth_defect,
    random_group_point,
    reorthonormalize,
)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def rand_vec(rng, basis, scale=1.0):
    return AlgebraVector(scale * rng.standard_normal(basis.m), basis)


@pytest.mark.parametrize("n,m,k", [(3, 3, 1), (4, 6, 3), (5, 10, 6)])
def test_dimension_counts(n, m, k):
    b = build_basis(n)
    assert (b.m, b.k, len(b.Y), len(b.Z)) == (m, k, k, n - 1)


def test_rejects_small_n():
    with pytest.raises(ValueError):
        build_basis(2)


def test_basis_orthonormal(n):
    b = build_basis(n)
    G = 0.5 * np.einsum("iab,jab->ij", b.matrices, b.matrices)
    assert np.abs(G - np.eye(b.m)).max() < 1e-12


def test_Y_annihilates_last_axis(n):
    b = build_basis(n)
    e = np.eye(n)[-1]
    for y in b.Y:
        assert np.abs(y.matrix @ e).max() == 0.0


def test_Z_brackets_lie_in_h(n):
    b = build_basis(n)
    for zb in b.Z:
        for zc in b.Z:
            assert np.abs(bracket(zb, zc).coords[b.k:]).max() < 1e-12


def test_z1_z2_bracket_n3():
    b = build_basis(3)
    E12 = np.zeros((3, 3))
    E12[0, 1], E12[1, 0] = 1.0, -1.0
    Z1, Z2 = b.Z
    assert np.allclose(bracket(Z1, Z2).matrix, -E12, atol=0)
    assert np.abs(bracket(Z1, Z2).coords[b.k:]).max() == 0.0


def test_structure_relation_z_y(n):
    """[Z_a, Y] = delta_ab Z_c - delta_ac Z_b for Y = E_bc - E_cb = -[Z_b, Z_c]."""
    b = build_basis(n)
    Z = b.Z
    for a in range(n - 1):
        for bb in range(n - 1):
            for c in range(bb + 1, n - 1):
                Y = -1.0 * bracket(Z[bb], Z[c])
                assert Y.matrix[bb, c] == 1.0
                lhs = bracket(Z[a], Y).matrix
                rhs = (a == bb) * Z[c].matrix - (a == c) * Z[bb].matrix
                assert np.abs(lhs - rhs).max() < 1e-14


def test_structure_tensor_matches_commutators(n, rng):
    b = build_basis(n)
    for _ in range(20):
        u, v = rng.standard_normal((2, b.m))
        U, V = b.to_matrix(u), b.to_matrix(v)
        assert np.allclose(b.to_matrix(b.bracket(u, v)), U @ V - V @ U, atol=1e-12)


def test_ad_skewness(n, rng):
    b = build_basis(n)
    for _ in range(100):
        u, v, w = (rand_vec(rng, b) for _ in range(3))
        assert abs(inner(bracket(w, u), v) + inner(u, bracket(w, v))) < 1e-12


def test_jacobi(rng):
    b = build_basis(4)
    for _ in range(50):
        x, y, z = (rand_vec(rng, b) for _ in range(3))
        r = bracket(x, bracket(y, z)) + bracket(y, bracket(z, x)) + bracket(z, bracket(x, y))
        assert r.norm() < 1e-12


def test_projections_split(n, rng):
    b = build_basis(n)
    c = rng.standard_normal(b.m)
    ph, pp = b.project_h(c), b.project_hperp(c)
    assert np.array_equal(ph + pp, c)
    assert ph @ pp == 0.0


def test_exp_h_fixes_last_axis(n, rng):
    b = build_basis(n)
    for y in b.Y:
        assert np.abs(exp_map(y).matrix[:, -1] - np.eye(n)[-1]).max() < 1e-12
    w = b.project_h(rng.standard_normal(b.m))
    assert np.abs(expm_skew(b.to_matrix(w))[:, -1] - np.eye(n)[-1]).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 6), arrays(np.float64, 15, elements=finite))
def test_round_trip_coords(n, raw):
    b = build_basis(n)
    c = raw[: b.m]
    M = b.to_matrix(c)
    assert np.abs(M + M.T).max() < 1e-12
    assert np.abs(b.to_coords(M) - c).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 5), st.integers(0, 2**32 - 1))
def test_inner_and_bracket_are_Ad_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    b = build_basis(n)
    s = random_group_point(rng, n)
    u, v = rand_vec(rng, b), rand_vec(rng, b)
    assert abs(inner(Ad(s, u), Ad(s, v)) - inner(u, v)) < 1e-10
    assert (Ad(s, bracket(u, v)) - bracket(Ad(s, u), Ad(s, v))).norm() < 1e-10
    assert (Ad(s.inverse(), Ad(s, u)) - u).norm() < 1e-10
    # coordinate form of Ad agrees with the matrix form
    assert np.allclose(b.Ad_matrix(s.matrix) @ u.coords, Ad(s, u).coords, atol=1e-12)


def test_inner_definite(rng):
    b = build_basis(3)
    assert inner(AlgebraVector(np.zeros(3), b), AlgebraVector(np.zeros(3), b)) == 0.0
    u = rand_vec(rng, b)
    assert inner(u, u) == pytest.approx(u.norm() ** 2, rel=1e-14) and inner(u, u) > 0


def test_Ad_identity(rng):
    b = build_basis(4)
    u = rand_vec(rng, b)
    assert np.array_equal(Ad(GroupPoint.identity(4), u).coords, u.coords)


def test_dimension_mismatch():
    u = AlgebraVector(np.zeros(3), build_basis(3))
    v = AlgebraVector(np.zeros(6), build_basis(4))
    with pytest.raises(ValueError):
        inner(u, v)
    with pytest.raises(ValueError):
        bracket(u, v)
    with pytest.raises(ValueError):
        Ad(np.eye(4), u)
    with pytest.raises(ValueError):
        AlgebraVector(np.zeros(4), build_basis(3))


def test_exp_of_zero():
    b = build_basis(4)
    assert np.array_equal(exp_map(AlgebraVector(np.zeros(6), b)).matrix, np.eye(4))


@pytest.mark.parametrize("scale", [1e-3, 0.5, 3.0, 10.0])
def test_exp_is_orthogonal(n, rng, scale):
    b = build_basis(n)
    for _ in range(10):
        c = rng.standard_normal(b.m)
        c *= scale / np.linalg.norm(c)
        E = exp_map(AlgebraVector(c, b))
        assert E.orth_defect < 1e-12
        assert np.linalg.det(E.matrix) == pytest.approx(1.0, abs=1e-12)


def test_exp_matches_scipy(n, rng):
    import scipy.linalg

    b = build_basis(n)
    A = b.to_matrix(3 * rng.standard_normal(b.m))
    assert np.abs(expm_skew(A) - scipy.linalg.expm(A)).max() < 1e-12


def test_batched_exp_independent_of_batch(rng):
    b = build_basis(3)
    small = b.to_matrix(0.01 * rng.standard_normal(3))
    big = b.to_matrix(5 * rng.standard_normal(3))
    alone = expm_skew(small)
    together = expm_skew(np.stack([small, big]))[0]
    assert np.array_equal(alone, together)


def test_log_round_trip(n, rng):
    b = build_basis(n)
    for _ in range(20):
        c = rng.standard_normal(b.m)
        c *= rng.uniform(0, 1) / np.linalg.norm(c)
        u = AlgebraVector(c, b)
        s = exp_map(u)
        if np.linalg.norm(s.matrix - np.eye(n), 2) < 1:
            assert (log_map(s, b) - u).norm() < 1e-10
        R = s.matrix
        if np.linalg.norm(R - np.eye(n), 2) < 1:
            assert np.abs(b.to_coords(log_near_identity(R)) - c).max() < 1e-10


def test_log_rejects_outside_safety_region():
    b = build_basis(3)
    s = exp_map(AlgebraVector(np.array([0.0, 0.0, 2.0]), b))
    with pytest.raises(LogSafetyError):
        log_map(s)
    with pytest.raises(LogSafetyError):
        log_near_identity(s.matrix)


def test_reorthonormalize(rng):
    assert np.array_equal(reorthonormalize(np.eye(4)).matrix, np.eye(4))
    s = random_group_point(rng, 4).matrix + 1e-3 * rng.standard_normal((4, 4))
    r = reorthonormalize(s)
    assert r.orth_defect < 1e-14
    assert np.linalg.det(r.matrix) > 0


def test_group_point_checks():
    with pytest.raises(ValueError):
        GroupPoint(np.zeros((2, 3)))
    s = GroupPoint(np.diag([1.0, 1.0, 1.0 + 1e-6]))
    assert s.orth_defect == pytest.approx(orth_defect(s.matrix))


def test_random_group_point_is_rotation(n, rng):
    for _ in range(20):
        s = random_group_point(rng, n)
        assert s.orth_defect < 1e-12
        assert np.linalg.det(s.matrix) == pytest.approx(1.0, abs=1e-9)


def test_haar_mean_of_entry():
    rng = np.random.default_rng(7)
    draws = np.array([random_group_point(rng, 3).matrix[0, 0] for _ in range(100_000)])
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean()) < 3 * se
